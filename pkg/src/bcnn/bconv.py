"""The equivariant convolution: rotation-invariant window operation, its
reflection-invariant variant, the efficient projected-filter forward, the
multi-scale variant, and the brute-force oracles that certify them all.

A layer owns a complex coefficient bank kappa[nu, j, c_in, c_out]. Projecting
the bank through the fixed transform tensor yields one complex direct-space
filter stack per angular order nu; the forward pass runs plain real
correlations for the real and imaginary parts and recombines them as
sum_nu |.|^2, which erases the global orientation of each window while
keeping translation behaviour intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, TransformTensor, build_basis, build_transform_tensor
from .conv import corr2d
from .fbimage import decompose

GROUPS = ("so2", "o2")
PADDINGS = ("same", "valid")


class ShapeError(ValueError):
    """Input/layer shape mismatch."""


@dataclass(frozen=True)
class FilterBank:
    """Learnable complex coefficients, zeroed outside the admitted mode set."""

    kappa: np.ndarray  # (nu_max+1, j_max, c_in, c_out) complex
    mask: np.ndarray  # (nu_max+1, j_max) bool
    spec: BasisSpec


@dataclass(frozen=True)
class BConvLayer:
    bank: FilterBank
    transforms: tuple[TransformTensor, ...]
    group: str
    stride: int
    padding: str
    c_in: int
    c_out: int
    filter_sizes: tuple[int, ...]

    @property
    def spec(self) -> BasisSpec:
        return self.bank.spec


def init_layer(
    c_in: int,
    c_out: int,
    filter_sizes,
    group: str = "so2",
    cutoff_policy: str = "full",
    seed: int = 0,
    stride: int = 1,
    padding: str = "valid",
) -> BConvLayer:
    """Seeded layer construction; the first filter size pins the mode set.

    Unmasked entries are N(0, 1/(2 m c_in)) in both real and imaginary part,
    m being the admitted mode count (variance-preserving fan-in for m complex
    modes); masked entries are exactly zero.
    """
    sizes = tuple(int(s) for s in filter_sizes)
    if not sizes:
        raise ShapeError("need at least one filter size")
    if any(s < 3 or s % 2 == 0 for s in sizes):
        raise ShapeError(f"filter sizes must be odd and >= 3, got {sizes}")
    if c_in < 1 or c_out < 1:
        raise ShapeError("channel counts must be positive")
    if group not in GROUPS:
        raise ShapeError(f"unknown group {group!r}")
    if padding not in PADDINGS:
        raise ShapeError(f"unknown padding {padding!r}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    spec = build_basis(sizes[0], cutoff_policy)
    transforms = tuple(build_transform_tensor(spec, s) for s in sizes)
    mask = spec.mask()
    rng = np.random.default_rng(seed)
    shape = (spec.nu_max + 1, spec.j_max, c_in, c_out)
    scale = 1.0 / np.sqrt(2.0 * spec.mode_count * c_in)
    kappa = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    kappa[~mask] = 0.0
    kappa.setflags(write=False)
    return BConvLayer(
        bank=FilterBank(kappa=kappa, mask=mask, spec=spec),
        transforms=transforms,
        group=group,
        stride=stride,
        padding=padding,
        c_in=c_in,
        c_out=c_out,
        filter_sizes=sizes,
    )


def project_filters(layer: BConvLayer) -> list[np.ndarray]:
    """Direct-space complex filters per scale: F[nu,p,ci,co] = sum_j T kappa* dA.

    The pixel-area factor makes the correlation the exact discretization of
    the window projection, so responses are comparable across scales and
    match the coefficient-space oracle with no rescaling.
    """
    out = []
    for tensor in layer.transforms:
        f = np.einsum(
            "npj,njio->npio", tensor.values, np.conj(layer.bank.kappa)
        ) * tensor.pixel_area
        out.append(f)
    return out


def _kernel_from_branches(branches, size: int, c_in: int, c_out: int) -> np.ndarray:
    mats = []
    for f in branches:
        mats.append(f.real)
        mats.append(f.imag)
    # each (nu_cnt, S^2, cin, cout) -> concat on a response axis
    k = np.concatenate([m[:, None] for m in mats], axis=1)  # (nu, 2B, S^2, cin, cout)
    nu_cnt, resp = k.shape[0], k.shape[1]
    k = np.moveaxis(k, 2, 0).reshape(size, size, nu_cnt * resp, c_in, c_out)
    k = np.moveaxis(k, 2, 3)  # (S, S, cin, nu*resp, cout)
    return k.reshape(size, size, c_in, nu_cnt * resp * c_out)


def _forward(x: np.ndarray, layer: BConvLayer, tensor: TransformTensor) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"input must be (N,H,W,C), got shape {x.shape}")
    if x.shape[3] != layer.c_in:
        raise ShapeError(f"input has {x.shape[3]} channels, layer expects {layer.c_in}")
    kc = np.conj(layer.bank.kappa)
    if layer.group == "so2":
        branches = [
            np.einsum("npj,njio->npio", tensor.values, kc) * tensor.pixel_area
        ]
    else:
        branches = [
            np.einsum("npj,njio->npio", tensor.values, kc.real) * tensor.pixel_area,
            np.einsum("npj,njio->npio", tensor.values, kc.imag) * tensor.pixel_area,
        ]
    kernel = _kernel_from_branches(
        branches, tensor.grid_size, layer.c_in, layer.c_out
    )
    z = corr2d(x, kernel, stride=layer.stride, padding=layer.padding)
    n, ho, wo, _ = z.shape
    z = z.reshape(n, ho, wo, -1, layer.c_out)
    return np.einsum("nhwrc,nhwrc->nhwc", z, z)


def forward_so2(x: np.ndarray, layer: BConvLayer) -> np.ndarray:
    """Rotation-invariant window responses: a = sum_nu |x (*) F_nu|^2."""
    if layer.group != "so2":
        raise ShapeError("layer group is not so2")
    return _forward(x, layer, layer.transforms[0])


def forward_o2(x: np.ndarray, layer: BConvLayer) -> np.ndarray:
    """Rotation- and reflection-invariant responses (separate Re/Im branches)."""
    if layer.group != "o2":
        raise ShapeError("layer group is not o2")
    return _forward(x, layer, layer.transforms[0])


def forward_multiscale(x: np.ndarray, layer: BConvLayer) -> np.ndarray:
    """Per-pixel max of the group forward across all configured scales.

    With a single scale this is exactly the plain forward. With several,
    each scale runs same-padding stride-1 so the output grids align; the
    configured stride is applied after the max.
    """
    if len(layer.transforms) == 1:
        return _forward(x, layer, layer.transforms[0])
    if layer.padding != "same":
        raise ShapeError("multi-scale forward requires same padding")
    single = BConvLayer(
        bank=layer.bank,
        transforms=layer.transforms,
        group=layer.group,
        stride=1,
        padding="same",
        c_in=layer.c_in,
        c_out=layer.c_out,
        filter_sizes=layer.filter_sizes,
    )
    out = _forward(x, single, layer.transforms[0])
    for tensor in layer.transforms[1:]:
        out = np.maximum(out, _forward(x, single, tensor))
    if layer.stride > 1:
        out = out[:, :: layer.stride, :: layer.stride, :]
    return out


def _phi_channels(patch: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """Coefficients per input channel: (nu_max+1, j_max, c_in)."""
    patch = np.asarray(patch)
    if patch.ndim == 2:
        patch = patch[:, :, None]
    return np.stack(
        [decompose(patch[:, :, c], spec).values for c in range(patch.shape[2])],
        axis=2,
    )


def _row_sums(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """s_nu = sum_{j, c} weights[nu,j,c] phi[nu,j,c] for each angular order."""
    return np.einsum("njc,njc->n", weights, phi)


def reference_activation_direct(
    patch: np.ndarray, kappa_slice: np.ndarray, spec: BasisSpec, group: str = "so2"
) -> float:
    """Coefficient-space activation of one window (the slow exact route)."""
    phi = _phi_channels(patch, spec)
    kc = np.conj(np.asarray(kappa_slice))
    if kc.ndim == 2:
        kc = kc[:, :, None]
    if group == "so2":
        s = _row_sums(phi, kc)
        return float(np.sum(np.abs(s) ** 2))
    if group == "o2":
        u = _row_sums(phi, kc.real)
        v = _row_sums(phi, kc.imag)
        return float(np.sum(np.abs(u) ** 2) + np.sum(np.abs(v) ** 2))
    raise ShapeError(f"unknown group {group!r}")


@dataclass(frozen=True)
class IntegralActivation:
    value: float
    quadrature_exact: bool


def reference_activation_integral(
    patch: np.ndarray,
    kappa_slice: np.ndarray,
    spec: BasisSpec,
    n_angles: int,
    group: str = "so2",
) -> IntegralActivation:
    """Average over explicit window orientations (the definitional route).

    Uniform-angle trapezoid over [0, 2pi); exact once n_angles covers the
    trigonometric degree of the integrand (2 nu_max + 1 always suffices),
    flagged non-exact below that bound.
    """
    if n_angles < 1:
        raise ValueError("n_angles must be >= 1")
    phi = _phi_channels(patch, spec)
    kc = np.conj(np.asarray(kappa_slice))
    if kc.ndim == 2:
        kc = kc[:, :, None]
    nus = np.arange(spec.nu_max + 1)
    alphas = 2.0 * np.pi * np.arange(n_angles) / n_angles
    phases = np.exp(-1j * np.outer(alphas, nus))  # (A, nu)
    if group == "so2":
        rows = [_row_sums(phi, kc)]
    elif group == "o2":
        rows = [_row_sums(phi, kc.real), _row_sums(phi, kc.imag)]
    else:
        raise ShapeError(f"unknown group {group!r}")
    total = 0.0
    for s in rows:
        responses = phases @ s
        total += float(np.mean(np.abs(responses) ** 2))
    return IntegralActivation(
        value=total, quadrature_exact=n_angles >= 2 * spec.nu_max + 1
    )


@dataclass(frozen=True)
class ReflectionDiscrepancy:
    empirical: float
    analytic: float

    @property
    def deviation(self) -> float:
        return abs(self.empirical - self.analytic)


def reflection_discrepancy(
    patch: np.ndarray, kappa_slice: np.ndarray, spec: BasisSpec
) -> ReflectionDiscrepancy:
    """Rotation-only activation difference between a window and its mirror.

    empirical: activation on the patch minus activation on its vertical
    mirror. analytic: the crossed-term closed form
    -4 sum_nu Im(sum_j Im(kappa*) phi) conj(sum_j Re(kappa*) phi);
    the two must agree, and both vanish when kappa is purely real or
    purely imaginary.
    """
    patch = np.asarray(patch)
    mirrored = patch[:, ::-1] if patch.ndim == 2 else patch[:, ::-1, :]
    empirical = reference_activation_direct(
        patch, kappa_slice, spec, "so2"
    ) - reference_activation_direct(mirrored, kappa_slice, spec, "so2")
    phi = _phi_channels(patch, spec)
    kc = np.conj(np.asarray(kappa_slice))
    if kc.ndim == 2:
        kc = kc[:, :, None]
    a = _row_sums(phi, kc.real)
    b = _row_sums(phi, kc.imag)
    analytic = -4.0 * float(np.sum(np.imag(b * np.conj(a))))
    return ReflectionDiscrepancy(empirical=empirical, analytic=analytic)
