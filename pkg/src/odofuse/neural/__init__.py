from .layers import DenseLayer, HiddenState, LstmLayer, bilstm_forward, detach_state, lstm_forward
from .optim import Adam, TrainingError, clip_global_norm
from .serialize import WeightFormatError, assign_state, load_weights, save_weights
from .tensor import Parameter, Tensor

__all__ = [
    "Adam",
    "DenseLayer",
    "HiddenState",
    "LstmLayer",
    "Parameter",
    "Tensor",
    "TrainingError",
    "WeightFormatError",
    "assign_state",
    "bilstm_forward",
    "clip_global_norm",
    "detach_state",
    "load_weights",
    "lstm_forward",
    "save_weights",
]
