"""Small numpy layer engine: layers, networks, Adam and gradient checks."""
from .gradcheck import GradCheckReport, check_gradients, numerical_gradient, relative_error
from .layers import (Conv2D, ConvTranspose2D, Dense, Layer, MaxPool2D, ReLU, Reshape, Sigmoid,
                     Softmax, Upsample2D, softmax_stable)
from .losses import binary_cross_entropy, cross_entropy, one_hot, sum_squared_error
from .network import Network
from .optim import AdamState, adam_step, sgd_step

__all__ = [
    "AdamState", "Conv2D", "ConvTranspose2D", "Dense", "GradCheckReport", "Layer", "MaxPool2D",
    "Network", "ReLU", "Reshape", "Sigmoid", "Softmax", "Upsample2D", "adam_step",
    "binary_cross_entropy", "check_gradients", "cross_entropy", "numerical_gradient", "one_hot",
    "relative_error", "sgd_step", "softmax_stable", "sum_squared_error",
]
