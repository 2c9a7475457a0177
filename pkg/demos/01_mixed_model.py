"""Simulate a skill, fit the doubly stochastic model and forecast the next day."""
# %%
import numpy as np

from seasoncast.classical import seasonal_naive
from seasoncast.core import sqrt_transform, wape
from seasoncast.datagen import SimConfig, simulate_skill
from seasoncast.mixedmodel import fit, forecast_next_day

cfg = SimConfig(n_weeks=15, seed=7, volume_scale=3.0)
s = simulate_skill(cfg)
print(s.n_days, "days,", s.calls.sum(), "calls")
print("busiest period on day 1:", s.calls_matrix()[0].argmax() + 1)

# %% fit on the first 14 weeks, keep the last day of week 15 as a check
train = s.select_days(1, 74)
m = fit(train)
print("converged:", m.converged, "after", m.iterations, "iterations")
print("sigma2_day   %.3f  (true %.3f)" % (m.cov.sigma2_day, cfg.sigma_day ** 2))
print("rho_day      %.3f  (true %.3f)" % (m.cov.rho_day, cfg.rho_day))
print("sigma2_resid %.3f  (true %.3f)" % (m.cov.sigma2_resid, cfg.sigma_resid ** 2))
print("rho_resid    %.3f  (true %.3f)" % (m.cov.rho_resid, cfg.rho_resid))

# %% the last BLUP decays by rho_day per day into the forecast
print("last day effects:", np.round(m.blups[-5:], 3))
rec = forecast_next_day(m, train, 75)
actual = s.calls_matrix()[s.day_index(75)]
naive = seasonal_naive(sqrt_transform(train.calls))
print("WAPE mixed model   %.2f%%" % (100 * wape(actual, rec.predictions)))
print("WAPE seasonal naive %.2f%%" % (100 * wape(actual, naive ** 2 - 0.25)))
