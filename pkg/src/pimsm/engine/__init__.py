from . import tensor as F
from .gradcheck import GradCheckReport, grad_check, rel_error
from .optim import AdamW, CosineWarmup, clip_grad_norm
from .tensor import Parameter, Tape, Tensor, as_tensor, backward, grad

__all__ = [
    "F", "Tensor", "Parameter", "Tape", "as_tensor", "backward", "grad",
    "grad_check", "GradCheckReport", "rel_error", "AdamW", "CosineWarmup", "clip_grad_norm",
]
