"""Light field containers, sub-aperture <-> micro-lens packing and augmentation.

Axis conventions used throughout the package:

* ``LightField.data`` has axes ``(u, v, s, t, c)``. ``u``/``s`` run horizontally,
  ``v``/``t`` vertically.
* A micro-lens (MLA) image is stored as a row-major ``(H, W, 3)`` array with
  ``H = T * V`` and ``W = S * U``. The pixel at column ``x = s*U + u`` and row
  ``y = t*V + v`` holds sample ``(u, v, s, t)``, so each ``U x V`` block gathers
  one spatial position seen from every view.
* Single views are returned as ``(T, S, 3)`` images (rows are ``t``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

MLA_CROP_WIDTH = 4608

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class LightField:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 5 or self.data.shape[-1] != 3:
            raise DimensionError(f"light field must have shape (U, V, S, T, 3), got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DimensionError(f"empty light field {self.data.shape}")

    @property
    def angular_res(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def spatial_res(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    def view(self, u: int, v: int) -> np.ndarray:
        """Sub-aperture image ``(u, v)`` as a ``(T, S, 3)`` image."""
        return self.data[u, v].transpose(1, 0, 2)

    @classmethod
    def from_views(cls, views: np.ndarray) -> "LightField":
        """Build from an array of view images shaped ``(U, V, T, S, 3)``."""
        return cls(np.asarray(views).transpose(0, 1, 3, 2, 4))

    def views(self) -> np.ndarray:
        return self.data.transpose(0, 1, 3, 2, 4)


@dataclass
class MicroLensImage:
    pixels: np.ndarray
    block_shape: tuple[int, int]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        U, V = self.block_shape
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DimensionError(f"MLA image must be (H, W, 3), got {self.pixels.shape}")
        H, W = self.pixels.shape[:2]
        if U < 1 or V < 1 or W % U or H % V:
            raise DimensionError(f"MLA image {W}x{H} is not tiled by {U}x{V} blocks")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_tensor(self) -> np.ndarray:
        """Channels-first ``(3, H, W)`` array for the network."""
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1))


@dataclass
class AugmentSpec:
    rotation: int = 0
    brightness_delta: float = 0.0
    contrast_scale: float = 1.0
    saturation_scale: float = 1.0
    channel_perm: tuple[int, int, int] = (0, 1, 2)
    seed: int | None = None

    def __post_init__(self):
        if self.rotation % 360 not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be a multiple of 90, got {self.rotation}")
        if self.contrast_scale <= 0 or self.saturation_scale <= 0:
            raise ValueError("contrast and saturation scales must be positive")
        if sorted(self.channel_perm) != [0, 1, 2]:
            raise ValueError(f"channel_perm must permute (0, 1, 2), got {self.channel_perm}")
        self.channel_perm = tuple(int(c) for c in self.channel_perm)

    @classmethod
    def sample(cls, rng: np.random.Generator, rotations=(0, 90, 180, 270)) -> "AugmentSpec":
        return cls(
            rotation=int(rng.choice(rotations)),
            brightness_delta=float(rng.uniform(-0.2, 0.2)),
            contrast_scale=float(rng.uniform(0.8, 1.2)),
            saturation_scale=float(rng.uniform(0.8, 1.2)),
            channel_perm=tuple(int(c) for c in rng.permutation(3)),
        )

    @property
    def is_identity(self) -> bool:
        return (self.rotation % 360 == 0 and self.brightness_delta == 0 and self.contrast_scale == 1
                and self.saturation_scale == 1 and self.channel_perm == (0, 1, 2))


def mla_from_sai(lf: LightField) -> MicroLensImage:
    U, V, S, T, C = lf.data.shape
    # (u, v, s, t, c) -> (t, v, s, u, c) -> rows t*V+v, cols s*U+u
    pixels = lf.data.transpose(3, 1, 2, 0, 4).reshape(T * V, S * U, C)
    return MicroLensImage(pixels, (U, V))


def sai_from_mla(mla: MicroLensImage | np.ndarray, U: int, V: int) -> LightField:
    pixels = mla.pixels if isinstance(mla, MicroLensImage) else np.asarray(mla)
    if pixels.ndim != 3:
        raise DimensionError(f"MLA image must be (H, W, 3), got {pixels.shape}")
    H, W, C = pixels.shape
    if U < 1 or V < 1 or W % U or H % V:
        raise DimensionError(f"MLA image {W}x{H} is not divisible by angular resolution {U}x{V}")
    T, S = H // V, W // U
    data = pixels.reshape(T, V, S, U, C).transpose(3, 1, 2, 0, 4)
    return LightField(np.ascontiguousarray(data))


def crop_offsets(width: int, U: int = 9, crop_width: int = MLA_CROP_WIDTH) -> list[int]:
    """Four evenly spread x-offsets, each a multiple of ``U``."""
    if width < crop_width:
        raise DimensionError(f"MLA width {width} is smaller than the crop width {crop_width}")
    step = (width - crop_width) // 3
    step -= step % U
    return [0, step, 2 * step, 3 * step]


def crop_mla_four(mla: MicroLensImage, crop_width: int = MLA_CROP_WIDTH) -> list[MicroLensImage]:
    U, _ = mla.block_shape
    if crop_width % U:
        raise DimensionError(f"crop width {crop_width} is not a multiple of U={U}")
    return [MicroLensImage(mla.pixels[:, x:x + crop_width], mla.block_shape)
            for x in crop_offsets(mla.width, U, crop_width)]


def linear_resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix ``(n_out, n_in)`` for 1-D linear resampling.

    Half-pixel centres with edge clamping; identity when ``n_in == n_out``.
    """
    if n_in == n_out:
        return np.eye(n_in)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    A = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(A, (rows, lo), 1 - frac)
    np.add.at(A, (rows, hi), frac)
    return A


def resize_spatial(lf: LightField, S2: int, T2: int) -> LightField:
    """Bilinearly resample every sub-aperture image to ``S2 x T2``."""
    if S2 < 2 or T2 < 2:
        raise DimensionError(f"degenerate resize target {S2}x{T2}")
    S, T = lf.spatial_res
    if (S, T) == (S2, T2):
        return LightField(lf.data.copy())
    As = linear_resize_matrix(S, S2)
    At = linear_resize_matrix(T, T2)
    out = np.einsum("as,uvstc->uvatc", As, lf.data, optimize=True)
    out = np.einsum("bt,uvatc->uvabc", At, out, optimize=True)
    return LightField(np.clip(out, 0.0, 1.0).astype(lf.data.dtype, copy=False))


def rotate_lf(lf: LightField, angle: int) -> LightField:
    """Rotate counter-clockwise by ``angle`` degrees, views and view grid together.

    A quarter turn maps (row, col) -> (W-1-col, row) on both the spatial image
    and the (v, u) grid of views, so the packed MLA image rotates the same way.
    """
    k = (angle // 90) % 4
    if angle % 90:
        raise ValueError(f"angle must be a multiple of 90, got {angle}")
    U, V = lf.angular_res
    if k % 2 and U != V:
        raise DimensionError(f"quarter turns need a square view grid, got {U}x{V}")
    if k == 0:
        return LightField(lf.data.copy())
    grid = lf.data.transpose(1, 0, 3, 2, 4)  # (v, u, t, s, c): image-like order
    grid = np.rot90(grid, k, axes=(0, 1))
    grid = np.rot90(grid, k, axes=(2, 3))
    return LightField(np.ascontiguousarray(grid.transpose(1, 0, 3, 2, 4)))


def photometric_transform(pixels: np.ndarray, spec: AugmentSpec, mean: float | None = None) -> np.ndarray:
    """Apply the colour part of ``spec`` to any ``(..., 3)`` array.

    ``mean`` is the contrast pivot; pass the light field mean so every view
    (and the packed MLA image) gets the exact same per-pixel transform.
    """
    x = pixels[..., list(spec.channel_perm)]
    x = x + spec.brightness_delta
    if spec.contrast_scale != 1:
        pivot = x.mean() if mean is None else mean + spec.brightness_delta
        x = (x - pivot) * spec.contrast_scale + pivot
    if spec.saturation_scale != 1:
        gray = (x @ _LUMA)[..., None]
        x = gray + (x - gray) * spec.saturation_scale
    return np.clip(x, 0.0, 1.0)


def photometric_augment(lf: LightField, spec: AugmentSpec) -> LightField:
    if spec.is_identity:
        return LightField(lf.data.copy())
    return LightField(photometric_transform(lf.data, spec, mean=float(lf.data.mean())))


def augment(lf: LightField, spec: AugmentSpec) -> LightField:
    """Rotation followed by the photometric changes."""
    out = rotate_lf(lf, spec.rotation) if spec.rotation % 360 else lf
    return photometric_augment(out, spec)


def center_view(lf: LightField) -> np.ndarray:
    U, V = lf.angular_res
    return lf.view(U // 2, V // 2)


def rotate_map(image: np.ndarray, angle: int) -> np.ndarray:
    """Rotate a ``(H, W, ...)`` image with the same convention as :func:`rotate_lf`."""
    return np.ascontiguousarray(np.rot90(image, (angle // 90) % 4, axes=(0, 1)))
