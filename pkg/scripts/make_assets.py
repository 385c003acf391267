"""Regenerate the bundled package assets (deterministic).

- assets/texture.pgm: smoothed value-noise grayscale texture for the
  generated -back dataset variants.
- assets/digit.pgm: one 28x28 handwritten digit for CLI demos.
"""

from pathlib import Path

import numpy as np

from bcnn.data import load_digits_fallback, write_pgm

ASSETS = Path(__file__).resolve().parent.parent / "src" / "bcnn" / "assets"


def value_noise(size: int, cell: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    coarse = rng.random((size // cell + 2, size // cell + 2))
    ys = np.arange(size) / cell
    xs = np.arange(size) / cell
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)


def main() -> None:
    ASSETS.mkdir(parents=True, exist_ok=True)
    texture = 0.5 * value_noise(128, 16, seed=11) + 0.5 * value_noise(128, 5, seed=23)
    write_pgm(ASSETS / "texture.pgm", texture / texture.max())
    digits = load_digits_fallback()
    write_pgm(ASSETS / "digit.pgm", digits.images[3, :, :, 0])
    print(f"wrote assets to {ASSETS}")


if __name__ == "__main__":
    main()
