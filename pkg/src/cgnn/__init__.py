"""Convolutional generative networks acting on wavelet scaling coefficients.

Signals live in nested spaces V_j spanned by translates of a Daubechies
scaling function. Layers refine a signal by a stride, convolve it with a
learned filter in function space, and apply an activation, so the network
is a map between finite-dimensional coefficient vectors that stays
meaningful as the resolution changes.
"""

from ._kernels import BACKEND
from .activations import ActivationSpec
from .grad import backward, forward_tape, grad_check, jvp
from .injectivity import InjectivityCertificate, certify
from .inverse import SignalFrame, gaussian_blur, landweber
from .network import CgnnConfig, CgnnParams, Generator, init_params
from .signals import CoeffSignal, DiscreteSignal, Layout
from .wavelets import ScalingFilter, daubechies_filter, eta, refine, restrict, scaling_family

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ActivationSpec",
    "CgnnConfig",
    "CgnnParams",
    "CoeffSignal",
    "DiscreteSignal",
    "Generator",
    "InjectivityCertificate",
    "Layout",
    "ScalingFilter",
    "SignalFrame",
    "backward",
    "certify",
    "daubechies_filter",
    "eta",
    "forward_tape",
    "gaussian_blur",
    "grad_check",
    "init_params",
    "jvp",
    "landweber",
    "refine",
    "restrict",
    "scaling_family",
]
