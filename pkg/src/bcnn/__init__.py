"""Radial-harmonic image transform and rotation/reflection-invariant
convolution, with a small numpy training runtime and a CLI."""

from .basis import BasisSpec, build_basis, build_transform_tensor, compute_kmax
from .bconv import (
    BConvLayer,
    FilterBank,
    forward_multiscale,
    forward_o2,
    forward_so2,
    init_layer,
    project_filters,
)
from .bessel import ModeRoot, bessel_j, bessel_j_prime, find_derivative_zeros
from .data import LabeledDataset, load_idx, rotate_image, stratified_subsample
from .fbimage import FBCoefficients, decompose, reconstruct, reflect_coeffs, rotate_coeffs

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "BConvLayer",
    "FBCoefficients",
    "FilterBank",
    "LabeledDataset",
    "ModeRoot",
    "bessel_j",
    "bessel_j_prime",
    "build_basis",
    "build_transform_tensor",
    "compute_kmax",
    "decompose",
    "find_derivative_zeros",
    "forward_multiscale",
    "forward_o2",
    "forward_so2",
    "init_layer",
    "load_idx",
    "project_filters",
    "reconstruct",
    "reflect_coeffs",
    "rotate_coeffs",
    "rotate_image",
    "stratified_subsample",
]
