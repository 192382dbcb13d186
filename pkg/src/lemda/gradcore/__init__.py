from .tensor import (
    ContractError,
    DimensionError,
    DomainError,
    Parameter,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    cross_entropy,
    dropout,
    elementwise,
    embedding,
    exp,
    frozen,
    gaussian_kl,
    gaussian_sample,
    index,
    is_grad_enabled,
    kl_divergence,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    soft_cross_entropy,
    softmax,
    split,
    square,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
)
from .check import check_gradients, numerical_grad, relative_error
from .optim import SGD, Adam, Optimizer, make_optimizer
from .nn import MLP, EmbeddingMean, LayerNorm, Linear, Module, SelfAttention, TransformerBlock


def optimizer_step(opt: Optimizer) -> None:
    opt.step()
