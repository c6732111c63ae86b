"""PNG and light-field file I/O.

Two on-disk light-field layouts are understood:

``mla``
    ``<id>.png`` holds the packed micro-lens image and ``<id>.txt`` next to it
    declares the angular resolution as ``U = 9`` / ``V = 9`` lines.
``sai-dir``
    a directory ``<id>/`` holding ``U*V`` files ``view_<u>_<v>.png``.

All 8-bit data is mapped to [0, 1] by dividing by 255.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError
from .lightfield import LightField, MicroLensImage, mla_from_sai, sai_from_mla

_VIEW_RE = re.compile(r"^view_(\d+)_(\d+)\.png$")


def read_png(path, mode="RGB") -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert(mode))
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    return arr.astype(float) / 255.0


def to_uint8(x) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, image) -> None:
    arr = to_uint8(image)
    Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB").save(path)


def read_kv(path) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_kv(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def layout_of(path) -> str:
    path = Path(path)
    if path.is_dir():
        return "sai-dir"
    if path.suffix.lower() == ".png":
        return "mla"
    raise FormatError(f"{path} is neither a PNG micro-lens image nor a view directory")


def sidecar_path(png_path) -> Path:
    return Path(png_path).with_suffix(".txt")


def load_light_field(path) -> LightField:
    path = Path(path)
    kind = layout_of(path)
    if kind == "mla":
        side = sidecar_path(path)
        if not side.exists():
            raise FormatError(f"{path}: missing sidecar {side.name} declaring U and V")
        kv = read_kv(side)
        try:
            U, V = int(kv["U"]), int(kv["V"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{side}: U and V must be integers") from exc
        return sai_from_mla(read_png(path), U, V)
    views = {}
    for f in path.iterdir():
        m = _VIEW_RE.match(f.name)
        if m:
            views[int(m.group(1)), int(m.group(2))] = f
    if not views:
        raise FormatError(f"{path}: no view_<u>_<v>.png files")
    U = max(u for u, _ in views) + 1
    V = max(v for _, v in views) + 1
    if len(views) != U * V:
        raise FormatError(f"{path}: expected {U * V} views, found {len(views)}")
    first = read_png(views[0, 0])
    grid = np.empty((U, V) + first.shape)
    for (u, v), f in views.items():
        img = first if (u, v) == (0, 0) else read_png(f)
        if img.shape != first.shape:
            raise FormatError(f"{f}: view size {img.shape} differs from {first.shape}")
        grid[u, v] = img
    return LightField.from_views(grid)


def save_light_field(lf: LightField, path, layout: str = "mla") -> Path:
    path = Path(path)
    if layout == "mla":
        if path.suffix.lower() != ".png":
            path = path.with_suffix(".png")
        write_png(path, mla_from_sai(lf).pixels)
        U, V = lf.angular_res
        write_kv(sidecar_path(path), {"U": U, "V": V})
    elif layout == "sai-dir":
        path.mkdir(parents=True, exist_ok=True)
        U, V = lf.angular_res
        for u in range(U):
            for v in range(V):
                write_png(path / f"view_{u}_{v}.png", lf.view(u, v))
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return path


def load_mla(path) -> MicroLensImage:
    lf = load_light_field(path)
    return mla_from_sai(lf)


def load_mask(path) -> np.ndarray:
    """Binary ground truth from an 8-bit grayscale PNG (salient iff >= 128)."""
    return read_png(path, mode="L") >= 0.5


def verify_image(path) -> None:
    try:
        with Image.open(path) as im:
            im.verify()
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
