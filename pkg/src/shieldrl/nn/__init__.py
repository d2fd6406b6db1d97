from .losses import PROB_EPS, binary_cross_entropy, binary_cross_entropy_tape, mse, mse_tape
from .mlp import Mlp, build_input, build_input_tape, param_count
from .optim import AdamState, adam_step
from .serialize import SerializationError, mlp_from_bytes, mlp_to_bytes
from .tensor import Tape, Tensor, backward, concat_cols

__all__ = [
    "Tape", "Tensor", "backward", "concat_cols",
    "Mlp", "param_count", "build_input", "build_input_tape",
    "AdamState", "adam_step",
    "binary_cross_entropy", "binary_cross_entropy_tape", "mse", "mse_tape", "PROB_EPS",
    "SerializationError", "mlp_to_bytes", "mlp_from_bytes",
]
