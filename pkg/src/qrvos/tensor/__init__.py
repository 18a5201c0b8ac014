"""Numpy-backed tensors with reverse-mode autodiff, layers, AdamW and checkpoint IO."""
from .tensor import (
    Tensor,
    abs_,
    add,
    as_tensor,
    bilinear_resize,
    concat,
    conv2d,
    div,
    embedding,
    exp,
    expand,
    getitem,
    grad_enabled,
    interp_matrix,
    layer_norm,
    log,
    log_sigmoid,
    matmul,
    max_,
    maximum,
    mean,
    minimum,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
from .nn import (
    Conv2d,
    Embedding,
    FeedForward,
    GroupNorm,
    LayerNorm,
    Linear,
    MLP,
    Module,
    MultiHeadAttention,
    Parameter,
    attention,
)
from .optim import AdamW, ParamGroup, adamw_step, clip_grad_norm
from .serialization import load_tensors, save_tensors
from .gradcheck import check_directional, check_gradients, numerical_grad, relative_error, settled_numerical_grad
