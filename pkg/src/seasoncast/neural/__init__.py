"""From-scratch dense, Elman, GRU and LSTM forecasters."""

from .layers import (GRU, LSTM, RECURRENT, Dense, SimpleRNN, dense_layer, gru_step, lstm_step,
                     sigmoid, simple_rnn_step)
from .network import MODEL_TYPES, Network
from .optim import AMSGrad, amsgrad_step, he_normal_init
from .training import (CHEAT_TAGS, TYPE_TAGS, NetworkConfig, NetworkFit, TrainingDiverged,
                       choose_epochs, fit_design, forecast_day, layer_param_count, split_design, train)

__all__ = [
    "AMSGrad", "CHEAT_TAGS", "Dense", "GRU", "LSTM", "MODEL_TYPES", "Network", "NetworkConfig",
    "NetworkFit", "RECURRENT", "SimpleRNN", "TYPE_TAGS", "TrainingDiverged", "amsgrad_step",
    "choose_epochs", "dense_layer", "fit_design", "forecast_day", "gru_step", "he_normal_init",
    "layer_param_count", "lstm_step", "sigmoid", "simple_rnn_step", "split_design", "train",
]
