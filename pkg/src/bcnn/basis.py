"""Band-limited mode enumeration and the discretized coefficient transform.

A basis is fixed by the filter size (an odd pixel count 2n+1) and a cutoff
policy. The cutoff k_max = (n + 1/2) pi keeps exactly the (nu, j) modes whose
radial frequency is representable on the pixel grid; "half" halves it. The
transform tensor samples each admitted basis element on the grid
{-1, -1+1/n, ..., 1}^2, masked to the unit disk, and is the single constant
that maps coefficient-space filters to direct-space filters.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .bessel import derivative_zeros_up_to, normalization_constant

CUTOFF_POLICIES = ("full", "half")


class ValidationError(ValueError):
    """Invalid construction parameters."""


@dataclass(frozen=True)
class BasisMode:
    """Admitted mode: angular order nu, radial index j, root k, norm N."""

    nu: int
    j: int
    k: float
    norm: float


@dataclass(frozen=True)
class BasisSpec:
    """The admitted mode set for one filter size; single source of mode indexing."""

    filter_size: int
    radius: float
    k_max: float
    cutoff_policy: str
    modes: tuple[BasisMode, ...]
    nu_max: int
    j_max: int

    @property
    def n(self) -> int:
        return (self.filter_size - 1) // 2

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    def counts_per_nu(self) -> list[int]:
        counts = [0] * (self.nu_max + 1)
        for m in self.modes:
            counts[m.nu] += 1
        return counts

    def mask(self) -> np.ndarray:
        """(nu_max+1, j_max) boolean admission mask."""
        out = np.zeros((self.nu_max + 1, self.j_max), dtype=bool)
        for m in self.modes:
            out[m.nu, m.j] = True
        return out


def compute_kmax(filter_size: int, policy: str = "full") -> float:
    """Band limit for a (2n+1)-pixel filter: (2n+1) pi / 2, halved for "half"."""
    if filter_size < 3 or filter_size % 2 == 0:
        raise ValidationError(f"filter_size must be odd and >= 3, got {filter_size}")
    if policy not in CUTOFF_POLICIES:
        raise ValidationError(f"unknown cutoff policy {policy!r}")
    k_max = filter_size * math.pi / 2.0
    return k_max / 2.0 if policy == "half" else k_max


def enumerate_modes(k_max: float, radius: float = 1.0) -> tuple[BasisMode, ...]:
    """All (nu, j) with k_{nu,j} <= k_max, lexicographic (nu asc, j asc).

    Enumeration walks nu upward and stops at the first order whose smallest
    root already exceeds the cutoff (roots shift right as nu grows).
    """
    if k_max <= 0.0:
        raise ValidationError("k_max must be positive")
    modes: list[BasisMode] = []
    nu = 0
    while True:
        roots = derivative_zeros_up_to(nu, k_max, radius)
        if not roots:
            break
        for mode in roots:
            modes.append(
                BasisMode(nu, mode.j, mode.k, normalization_constant(nu, mode.k, radius))
            )
        nu += 1
    return tuple(modes)


def build_basis(filter_size: int, cutoff_policy: str = "full") -> BasisSpec:
    """BasisSpec for one filter size (radius fixed at 1)."""
    k_max = compute_kmax(filter_size, cutoff_policy)
    modes = enumerate_modes(k_max, 1.0)
    nu_max = max(m.nu for m in modes)
    j_max = sum(1 for m in modes if m.nu == 0)
    return BasisSpec(
        filter_size=filter_size,
        radius=1.0,
        k_max=k_max,
        cutoff_policy=cutoff_policy,
        modes=modes,
        nu_max=nu_max,
        j_max=j_max,
    )


def grid_coordinates(grid_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates: x right along columns, y up along rows.

    Row 0 is y = +1 so that increasing angle theta = atan2(y, x) matches a
    counter-clockwise rotation of the displayed image.
    """
    n = (grid_size - 1) // 2
    cols = (np.arange(grid_size) - n) / n
    rows = (n - np.arange(grid_size)) / n
    x = np.broadcast_to(cols[None, :], (grid_size, grid_size))
    y = np.broadcast_to(rows[:, None], (grid_size, grid_size))
    return x, y


@dataclass(frozen=True)
class TransformTensor:
    """Sampled basis conjugates N J_nu(k rho) exp(-i nu theta), disk-masked.

    values[nu, p, j] over flattened pixels p of a grid_size^2 patch; zero for
    pixels outside the unit disk and for (nu, j) outside the admitted set.
    """

    spec: BasisSpec
    grid_size: int
    values: np.ndarray

    @property
    def pixel_area(self) -> float:
        n = (self.grid_size - 1) // 2
        return 1.0 / (n * n)


def build_transform_tensor(spec: BasisSpec, grid_size: int | None = None) -> TransformTensor:
    """Materialize the transform for `spec`, optionally on another odd grid.

    A non-default grid_size projects the same mode set onto a different
    filter size (the multi-scale case); the mode set stays pinned by `spec`.
    Computed once; the returned array is read-only.
    """
    size = spec.filter_size if grid_size is None else grid_size
    if size < 3 or size % 2 == 0:
        raise ValidationError(f"grid size must be odd and >= 3, got {size}")
    x, y = grid_coordinates(size)
    rho = np.hypot(x, y).ravel()
    theta = np.arctan2(y, x).ravel()
    inside = rho <= spec.radius
    values = np.zeros((spec.nu_max + 1, size * size, spec.j_max), dtype=np.complex128)
    from .bessel import bessel_j  # local import keeps module load light

    for mode in spec.modes:
        radial = np.zeros_like(rho)
        radial[inside] = [bessel_j(mode.nu, mode.k * r) for r in rho[inside]]
        values[mode.nu, :, mode.j] = (
            mode.norm * radial * np.exp(-1j * mode.nu * theta) * inside
        )
    values.setflags(write=False)
    return TransformTensor(spec=spec, grid_size=size, values=values)


def basis_gram(spec: BasisSpec, oversample: int = 1) -> np.ndarray:
    """Discrete Gram matrix of the admitted basis elements over the disk.

    Pixel-area-weighted inner products on a grid refined `oversample` times;
    rows/columns follow the lexicographic mode order of `spec.modes`.
    """
    if oversample < 1:
        raise ValidationError("oversample must be >= 1")
    n = spec.n * oversample
    tensor = build_transform_tensor(spec, 2 * n + 1)
    cols = [np.conj(tensor.values[m.nu, :, m.j]) for m in spec.modes]
    count = len(cols)
    gram = np.zeros((count, count), dtype=np.complex128)
    # Upper triangle only, mirrored by conjugation: Hermitian by construction.
    for a in range(count):
        for b in range(a, count):
            val = np.vdot(cols[a], cols[b]) * tensor.pixel_area
            gram[a, b] = val
            gram[b, a] = np.conj(val)
    return gram


_MAGIC = b"BCNB"
_VERSION = 1
_POLICY_CODE = {"full": 0, "half": 1}
_POLICY_NAME = {v: k for k, v in _POLICY_CODE.items()}


def basis_to_bytes(spec: BasisSpec) -> bytes:
    head = struct.pack(
        "<4sIIBddI",
        _MAGIC,
        _VERSION,
        spec.filter_size,
        _POLICY_CODE[spec.cutoff_policy],
        spec.radius,
        spec.k_max,
        len(spec.modes),
    )
    body = b"".join(
        struct.pack("<IIdd", m.nu, m.j, m.k, m.norm) for m in spec.modes
    )
    return head + body


def basis_from_bytes(blob: bytes) -> BasisSpec:
    head_size = struct.calcsize("<4sIIBddI")
    magic, version, filter_size, policy, radius, k_max, n_modes = struct.unpack(
        "<4sIIBddI", blob[:head_size]
    )
    if magic != _MAGIC:
        raise ValidationError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise ValidationError(f"unsupported basis file version {version}")
    rec = struct.calcsize("<IIdd")
    modes = []
    for i in range(n_modes):
        nu, j, k, norm = struct.unpack_from("<IIdd", blob, head_size + i * rec)
        modes.append(BasisMode(nu, j, k, norm))
    nu_max = max(m.nu for m in modes)
    j_max = sum(1 for m in modes if m.nu == 0)
    return BasisSpec(
        filter_size=filter_size,
        radius=radius,
        k_max=k_max,
        cutoff_policy=_POLICY_NAME[policy],
        modes=tuple(modes),
        nu_max=nu_max,
        j_max=j_max,
    )


def save_basis(spec: BasisSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(basis_to_bytes(spec))


def load_basis(path) -> BasisSpec:
    with open(path, "rb") as fh:
        return basis_from_bytes(fh.read())


def basis_hash(spec: BasisSpec) -> str:
    """Short stable identifier of the exact mode table (for report headers)."""
    return hashlib.sha256(basis_to_bytes(spec)).hexdigest()[:16]


def basis_to_json(spec: BasisSpec) -> str:
    return json.dumps(
        {
            "filter_size": spec.filter_size,
            "radius": spec.radius,
            "k_max": spec.k_max,
            "cutoff_policy": spec.cutoff_policy,
            "nu_max": spec.nu_max,
            "j_max": spec.j_max,
            "modes": [
                {"nu": m.nu, "j": m.j, "k": m.k, "norm": m.norm} for m in spec.modes
            ],
        },
        indent=2,
    )
