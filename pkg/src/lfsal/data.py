"""Datasets: a seeded synthetic light-field scene generator, on-disk indexing
and grouped k-fold splits.

Synthetic scenes
----------------
Each scene is a textured background plane at zero disparity with two
textured squares composited in front of it. Both squares draw their tint,
texture and size from the same distribution; they differ only in depth. The
nearer square shifts ``near_disparity`` pixels per view step, the other
``far_disparity``. The nearer square is the salient object, so its
centre-view footprint is the ground truth. A single view therefore carries
no cue about which square is salient; only the angular structure does.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DimensionError, FormatError, PairingError
from .io import layout_of, load_light_field, load_mask, save_light_field, verify_image, write_png
from .lightfield import LightField

_CROP_RE = re.compile(r"__crop\d+$")


@dataclass(frozen=True)
class SceneSpec:
    angular: int = 9
    spatial: int = 32
    near_disparity: float = 1.0
    far_disparity: float = 0.25
    size_range: tuple[int, int] = (7, 10)
    texture_cell: int = 2  # texture detail size in pixels
    grid: int = 2  # square sizes and corners snap to this, so 2x2-pooled masks stay binary


def _texture(rng, n, cell, tint, amplitude):
    """``(n, n, 3)`` blocky noise around ``tint``; bilinear sampling smooths it."""
    coarse = rng.uniform(-amplitude, amplitude, size=(-(-n // cell) + 1,) * 2 + (1,))
    tex = np.repeat(np.repeat(coarse, cell, axis=0), cell, axis=1)[:n + 1, :n + 1]
    return np.clip(tint + tex, 0.0, 1.0)


def _place_two(rng, spatial, sizes, margin, grid=1):
    """Top-left corners (multiples of ``grid``) of two non-overlapping squares kept ``margin`` from the border."""
    lo = -(-int(np.ceil(margin)) // grid)
    for _ in range(1000):
        corners = [tuple(grid * int(rng.integers(lo, int(spatial - s - margin) // grid + 1)) for _ in range(2))
                   for s in sizes]
        (y0, x0), (y1, x1) = corners
        gap = 1
        if (y0 + sizes[0] + gap <= y1 or y1 + sizes[1] + gap <= y0
                or x0 + sizes[0] + gap <= x1 or x1 + sizes[1] + gap <= x0):
            return corners
    raise DimensionError(f"cannot place two squares of sizes {sizes} in {spatial}x{spatial}")


def synth_scene(rng: np.random.Generator, spec: SceneSpec = SceneSpec()) -> tuple[LightField, np.ndarray]:
    """One ``(light field, ground-truth mask)`` pair; mask is ``(T, S)`` bool."""
    A, N = spec.angular, spec.spatial
    c = (A - 1) / 2
    lo, hi = spec.size_range
    g = spec.grid
    sizes = [g * int(rng.integers(-(-lo // g), hi // g + 1)) for _ in range(2)]
    margin = spec.near_disparity * c
    corners = _place_two(rng, N, sizes, margin, g)
    near = int(rng.integers(2))  # which of the two squares is in front

    bg = _texture(rng, N, spec.texture_cell * 2, rng.uniform(0.2, 0.8, 3), 0.15)
    objects = []
    for k in range(2):
        tex = _texture(rng, sizes[k], spec.texture_cell, rng.uniform(0.1, 0.9, 3), 0.3)
        disp = spec.near_disparity if k == near else spec.far_disparity
        objects.append((disp, corners[k], sizes[k], tex))
    objects.sort(key=lambda o: o[0])  # paint far to near

    data = np.empty((A, A, N, N, 3))
    rows, cols = np.mgrid[0:N, 0:N].astype(float)
    for u in range(A):
        for v in range(A):
            img = bg[:N, :N].copy()
            for disp, (y0, x0), size, tex in objects:
                # view (u, v) sees the object displaced by disp * (u - c, v - c)
                ty = rows - y0 - disp * (v - c)
                tx = cols - x0 - disp * (u - c)
                inside = (ty >= 0) & (ty < size) & (tx >= 0) & (tx < size)
                for ch in range(3):
                    vals = map_coordinates(tex[..., ch], [ty[inside], tx[inside]], order=1, mode="nearest")
                    img[..., ch][inside] = vals
            data[u, v] = img.transpose(1, 0, 2)  # (T, S) image -> (S, T)
    mask = np.zeros((N, N), dtype=bool)
    (y0, x0), size = corners[near], sizes[near]
    mask[y0:y0 + size, x0:x0 + size] = True
    return LightField(data), mask


def synth_dataset(n: int, seed: int = 0, spec: SceneSpec = SceneSpec()):
    """``n`` scenes from one seeded stream; returns ``(light_fields, masks)``."""
    rng = np.random.default_rng(seed)
    pairs = [synth_scene(rng, spec) for _ in range(n)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def synth_rgb_saliency(n: int, size: int, seed: int = 0, spec: SceneSpec = SceneSpec()):
    """Plain RGB images with one textured square each, for detector pretraining.

    Returns ``(images, masks)`` with images ``(size, size, 3)``.
    """
    rng = np.random.default_rng(seed)
    images, masks = [], []
    lo, hi = spec.size_range
    for _ in range(n):
        img = _texture(rng, size, spec.texture_cell * 2, rng.uniform(0.2, 0.8, 3), 0.15)[:size, :size]
        side = max(2, int(round(rng.integers(lo, hi + 1) * size / spec.spatial)))
        y0, x0 = (int(rng.integers(0, size - side + 1)) for _ in range(2))
        img[y0:y0 + side, x0:x0 + side] = _texture(rng, side, spec.texture_cell, rng.uniform(0.1, 0.9, 3), 0.3)[:side, :side]
        m = np.zeros((size, size), dtype=bool)
        m[y0:y0 + side, x0:x0 + side] = True
        images.append(img)
        masks.append(m)
    return images, masks


def write_synth_dataset(root, n: int, seed: int = 0, spec: SceneSpec = SceneSpec(), layout: str = "mla") -> Path:
    """Write scenes as ``root/lf/<id>`` and ``root/gt/<id>.png``."""
    root = Path(root)
    (root / "lf").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    lfs, masks = synth_dataset(n, seed, spec)
    for i, (lf, m) in enumerate(zip(lfs, masks)):
        sid = f"scene{i:04d}"
        save_light_field(lf, root / "lf" / (sid + (".png" if layout == "mla" else "")), layout)
        write_png(root / "gt" / f"{sid}.png", m.astype(float))
    return root


@dataclass
class DatasetIndex:
    entries: list[tuple[str, Path, Path]] = field(default_factory=list)
    layout_kind: str = "mla"

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def load(self, i: int) -> tuple[LightField, np.ndarray]:
        _, lf_path, gt_path = self.entries[i]
        return load_light_field(lf_path), load_mask(gt_path)

    def subset(self, idx) -> "DatasetIndex":
        return DatasetIndex([self.entries[i] for i in idx], self.layout_kind)

    def write(self, path) -> None:
        """One tab-separated ``id  lf_path  gt_path`` line per entry."""
        Path(path).write_text("".join(f"{i}\t{a}\t{b}\n" for i, a, b in self.entries))

    @classmethod
    def read(cls, path) -> "DatasetIndex":
        entries = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                i, a, b = line.split("\t")
                entries.append((i, Path(a), Path(b)))
        kind = layout_of(entries[0][1]) if entries else "mla"
        return cls(entries, kind)


def ingest_dataset(root) -> DatasetIndex:
    """Pair ``root/lf/<id>(.png|/)`` with ``root/gt/<id>.png`` and validate every file."""
    root = Path(root)
    lf_dir, gt_dir = root / "lf", root / "gt"
    for d in (lf_dir, gt_dir):
        if not d.is_dir():
            raise FormatError(f"{root}: missing {d.name}/ subdirectory")
    lfs = {}
    for p in lf_dir.iterdir():
        if p.is_dir() or p.suffix.lower() == ".png":
            lfs[p.stem if p.is_file() else p.name] = p
    gts = {p.stem: p for p in gt_dir.iterdir() if p.suffix.lower() == ".png"}
    orphans = sorted(f"lf/{lfs[k].name}" for k in lfs.keys() - gts.keys())
    orphans += sorted(f"gt/{gts[k].name}" for k in gts.keys() - lfs.keys())
    if orphans:
        raise PairingError(f"unpaired files: {', '.join(orphans)}")
    kinds = {layout_of(p) for p in lfs.values()}
    if len(kinds) > 1:
        raise FormatError(f"{root}: mixed light-field layouts {sorted(kinds)}; one layout per dataset")
    for sid in sorted(lfs):
        path = lfs[sid]
        for f in ([path] if path.is_file() else sorted(path.glob("*.png"))):
            verify_image(f)
        verify_image(gts[sid])
    entries = [(sid, lfs[sid], gts[sid]) for sid in sorted(lfs)]
    return DatasetIndex(entries, kinds.pop() if kinds else "mla")


def source_of(item_id: str) -> str:
    """Crops are named ``<source>__crop<k>``; anything else is its own source."""
    return _CROP_RE.sub("", item_id)


def split_kfold(index, k: int = 5, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    """Grouped k-fold split over item positions.

    ``index`` is a :class:`DatasetIndex` or a list of ids. Sources (see
    :func:`source_of`) are shuffled with ``seed`` and dealt round-robin, so
    no source straddles folds and fold sizes in sources differ by at most one.
    """
    ids = index.ids if isinstance(index, DatasetIndex) else list(index)
    if k < 2:
        raise DimensionError(f"k-fold needs k >= 2, got {k}")
    groups: dict[str, list[int]] = {}
    for i, item in enumerate(ids):
        groups.setdefault(source_of(item), []).append(i)
    if len(groups) < k:
        raise DimensionError(f"{len(groups)} sources cannot fill {k} folds")
    order = sorted(groups)
    perm = np.random.default_rng(seed).permutation(len(order))
    fold_of = {order[p]: j % k for j, p in enumerate(perm)}
    folds = []
    for f in range(k):
        test = sorted(i for g, members in groups.items() if fold_of[g] == f for i in members)
        test_set = set(test)
        folds.append(([i for i in range(len(ids)) if i not in test_set], test))
    return folds
