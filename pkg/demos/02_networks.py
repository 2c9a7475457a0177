"""Forward passes by hand, then a small GRU trained on a five-week window."""
# %%
import numpy as np

from seasoncast.core import PeriodGrid
from seasoncast.datagen import SimConfig, simulate_skill
from seasoncast.features import build_design
from seasoncast.harness import cheat_inputs, training_window
from seasoncast.neural import NetworkConfig, dense_layer
from seasoncast.neural.training import fit_design, forecast_day

# one tanh node with the 0.5 scale, lagged standardized volume x = 1
h = dense_layer([[0.5323]], [0.4046], [1.0], "tanh", scale=0.5)
print("single node:", dense_layer([[3.3923]], [-0.6354], h).round(3))

# %% encode a window: 5 weekday + 32 period indicators, two lags, holiday flags, day counter
s = simulate_skill(SimConfig(n_weeks=6, seed=3, volume_scale=3.0))
first, last = training_window(s, 30)
d = build_design(s, first, last, 30)
print("design", d.X.shape, "target rows", d.X_target.shape)

# %% short training run; the trainer picks the epoch count on the last week, then refits
cfg = NetworkConfig("gru", nlayers=1, nnodes=25, max_epochs=120, seed=0)
net = fit_design(cfg, d, PeriodGrid())
print("chosen epochs:", net.chosen_epochs)
actual = s.calls_matrix()[s.day_index(30)]
rec = forecast_day(net, d.X_target, s.skill, 30, actual)
print("GRU WAPE %.2f%%" % (100 * rec.wape))

# %% same network with the classical forecasts as three extra inputs
ch = cheat_inputs(s, 30)
dc = build_design(s, first, last, 30, ch)
netc = fit_design(NetworkConfig("gru", nnodes=25, max_epochs=120, mixed_cheat=True, seed=0), dc, PeriodGrid())
print("GRU_cheat WAPE %.2f%%" % (100 * forecast_day(netc, dc.X_target, s.skill, 30, actual).wape))
print("history tail:", np.round(net.history["val_wape"][-3:], 4))
