"""Three-stage training, prediction and evaluation.

Stage 1 fits the detector alone on plain RGB saliency images. Stage 2 trains
the FEE encoder through the frozen detector. Stage 3 trains both. Every stage
uses SGD with momentum on the class-weighted cross entropy and a constant
learning rate.
"""
from __future__ import annotations

import contextlib
import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import engine as E
from .data import DatasetIndex, synth_rgb_saliency
from .detector import build_detector, detector_graph, pipeline_forward, detector_forward
from .errors import DimensionError, FormatError, NumericError
from .fee import build_fee, fee_graph
from .functional import weighted_bce_loss
from .io import load_light_field, read_kv, write_png
from .lightfield import (AugmentSpec, LightField, augment, center_view, linear_resize_matrix, mla_from_sai,
                         resize_spatial, rotate_map)
from .metrics import MetricsReport, evaluate_dataset
from .params import ParamSet, load_checkpoint, save_checkpoint, sgd_momentum_step

TRAIN_ROTATIONS = (0, 90, 180)


@dataclass
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 8
    stage1_epochs: int = 0
    stage2_epochs: int = 10
    stage3_epochs: int = 40
    alpha_s: float = 0.528
    seed: int = 0
    profile: str = "toy"
    spatial: int = 32
    augment_rotation: bool = True
    augment_color: bool = True
    stage1_images: int = 64
    single_thread: bool = True
    dtype: str = "float64"  # compute precision; parameters stay float64

    def __post_init__(self):
        for name in ("stage1_epochs", "stage2_epochs", "stage3_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.spatial % 32:
            raise DimensionError(f"spatial={self.spatial} must be a multiple of 32 (detector grid is spatial/2)")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        """Build from string values (config file or CLI); unknown keys are rejected."""
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for k, v in values.items():
            if k not in types:
                raise FormatError(f"unknown config key {k!r}")
            kind = types[k]
            if kind == "bool" and isinstance(v, str):
                if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise FormatError(f"{k}: expected a boolean, got {v!r}")
                kw[k] = v.lower() in ("true", "1", "yes")
            else:
                kw[k] = {"int": int, "float": float, "str": str, "bool": bool}[kind](v)
        return cls(**kw)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "TrainConfig":
        values = read_kv(path) if path else {}
        values.update(overrides or {})
        return cls.from_dict(values)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@contextlib.contextmanager
def _threads(single: bool):
    if single:
        with threadpool_limits(limits=1):
            yield
    else:
        yield


def pool2(y: np.ndarray) -> np.ndarray:
    """2x2 mean pooling of a ``(H, W)`` map."""
    H, W = y.shape
    return to_grid(y, (H // 2, W // 2))


def resize_map(m: np.ndarray, shape) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape == tuple(shape):
        return m
    return linear_resize_matrix(m.shape[0], shape[0]) @ m @ linear_resize_matrix(m.shape[1], shape[1]).T


def _as_pairs(dataset):
    if isinstance(dataset, DatasetIndex):
        return [dataset.load(i) for i in range(len(dataset))]
    return list(dataset)


def prepare(dataset, spatial: int):
    """Resize every light field to ``spatial``; targets become float ``(spatial, spatial)`` maps."""
    out = []
    for lf, mask in _as_pairs(dataset):
        if lf.spatial_res != (spatial, spatial):
            lf = resize_spatial(lf, spatial, spatial)
        out.append((lf, resize_map(mask, (spatial, spatial))))
    return out


def _grads(pv: dict, names, weight_decay: float, where: str) -> dict:
    grads = {}
    for n in names:
        g = pv[n].grad
        if g is None:
            g = np.zeros_like(pv[n].value)
        g = g.astype(np.float64, copy=False)
        if weight_decay:
            g = g + weight_decay * pv[n].value
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {n} at {where}")
        grads[n] = g
    return grads


def _step(forward, params: ParamSet, trainable, x, y, cfg: TrainConfig, where: str) -> float:
    pv = params.as_vars(trainable, dtype=cfg.dtype)
    try:
        out = forward(E.Var(x.astype(cfg.dtype, copy=False)), pv)
    except NumericError as exc:
        raise NumericError(f"{exc} at {where}") from exc
    loss, g = weighted_bce_loss(out.value, y, cfg.alpha_s)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at {where}")
    E.backward(out, g.astype(out.value.dtype, copy=False))
    names = [n for n in params if (trainable(n) if callable(trainable) else trainable)]
    sgd_momentum_step(params, _grads(pv, names, cfg.weight_decay, where), cfg.lr, cfg.momentum)
    return loss


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _aug_spec(rng, cfg: TrainConfig) -> AugmentSpec:
    if not (cfg.augment_rotation or cfg.augment_color):
        return AugmentSpec()
    s = AugmentSpec.sample(rng, TRAIN_ROTATIONS if cfg.augment_rotation else (0,))
    return s if cfg.augment_color else AugmentSpec(rotation=s.rotation)


def _pipeline_graph(x, pv):
    return detector_graph(fee_graph(x, pv), pv)


def _detector_only_graph(x, pv):
    return detector_graph(x, pv)


@dataclass
class TrainResult:
    params: ParamSet
    log: list[tuple[int, str, float]]  # (epoch, stage, mean loss)
    snapshots: dict[str, ParamSet]


def _run_epochs(stage, n_epochs, samples, make_batch, forward, params, trainable, cfg, rng, log, start):
    for e in range(n_epochs):
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(rng, len(samples), cfg.batch_size)):
            x, y = make_batch(idx)
            where = f"stage={stage} epoch={start + e + 1} batch={b + 1}"
            total += _step(forward, params, trainable, x, y, cfg, where) * len(idx)
            count += len(idx)
        log.append((start + e + 1, stage, total / count))
    return start + n_epochs


def train(cfg: TrainConfig, dataset, log_path=None, checkpoint_path=None, detector_only: bool = False) -> TrainResult:
    """Run the schedule on ``dataset`` (a :class:`DatasetIndex` or ``(lf, mask)`` pairs).

    With ``detector_only`` the FEE is left out and stages 2 and 3 instead train
    the detector on centre views for the same number of epochs (the ablation
    baseline).
    """
    with _threads(cfg.single_thread):
        samples = prepare(dataset, cfg.spatial)
        rng = np.random.default_rng(cfg.seed)
        det = build_detector(cfg.profile, seed=cfg.seed + 1)
        fee = None if detector_only else build_fee(seed=cfg.seed)
        out_size = cfg.spatial // 2
        log, snapshots = [], {}
        epoch = 0

        if cfg.stage1_epochs:
            imgs, masks = synth_rgb_saliency(cfg.stage1_images, out_size, seed=cfg.seed + 7)

            def rgb_batch(idx):
                x = np.stack([imgs[i].transpose(2, 0, 1) for i in idx])
                return x, np.stack([masks[i].astype(float) for i in idx])[:, None]

            epoch = _run_epochs("1", cfg.stage1_epochs, imgs, rgb_batch, _detector_only_graph, det, True,
                                cfg, rng, log, epoch)
        snapshots["after_stage1"] = det.copy()

        if detector_only:
            def view_batch(idx):
                xs, ys = [], []
                for i in idx:
                    lf, y = samples[i]
                    spec = _aug_spec(rng, cfg)
                    xs.append(center_view(augment(lf, spec)).transpose(2, 0, 1))
                    ys.append(rotate_map(y, spec.rotation))
                return np.stack(xs), np.stack(ys)[:, None]

            n = cfg.stage2_epochs + cfg.stage3_epochs
            epoch = _run_epochs("baseline", n, samples, view_batch, _detector_only_graph, det, True,
                                cfg, rng, log, epoch)
            params = det
        else:
            params = fee.merged(det)

            def lf_batch(idx):
                xs, ys = [], []
                for i in idx:
                    lf, y = samples[i]
                    spec = _aug_spec(rng, cfg)
                    xs.append(mla_from_sai(augment(lf, spec)).to_tensor())
                    ys.append(pool2(rotate_map(y, spec.rotation)))
                return np.stack(xs), np.stack(ys)[:, None]

            epoch = _run_epochs("2", cfg.stage2_epochs, samples, lf_batch, _pipeline_graph, params,
                                lambda n: n.startswith("fee."), cfg, rng, log, epoch)
            snapshots["after_stage2"] = params.copy()
            epoch = _run_epochs("3", cfg.stage3_epochs, samples, lf_batch, _pipeline_graph, params, True,
                                cfg, rng, log, epoch)

        params = _with_meta(params, cfg)
        if log_path is not None:
            write_log(log, log_path)
        if checkpoint_path is not None:
            save_checkpoint(params, checkpoint_path)
        return TrainResult(params, log, snapshots)


def _with_meta(params: ParamSet, cfg: TrainConfig) -> ParamSet:
    out = ParamSet()
    for name, v in params.items():
        if not name.startswith("meta."):
            out.values[name] = v
            out.velocity[name] = params.velocity[name]
    out.add("meta.spatial", np.array(float(cfg.spatial)))
    return out


def write_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "stage", "mean_loss"])
        for epoch, stage, loss in log:
            w.writerow([epoch, stage, repr(float(loss))])


@dataclass
class Model:
    """A loaded checkpoint: FEE + detector, or a detector fed centre views."""
    fee: ParamSet | None
    det: ParamSet
    spatial: int

    @classmethod
    def from_params(cls, params: ParamSet) -> "Model":
        if "meta.spatial" not in params:
            raise FormatError("checkpoint lacks meta.spatial")
        spatial = int(params["meta.spatial"])
        fee = params.subset("fee.") if params.names("fee.") else None
        det = params.subset("det.")
        if not len(det):
            raise FormatError("checkpoint has no detector parameters")
        return cls(fee, det, spatial)

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_params(load_checkpoint(path))

    def predict_lf(self, lf: LightField, dtype=None) -> np.ndarray:
        """Saliency map ``(spatial/2, spatial/2)`` (FEE model) or ``(spatial, spatial)``."""
        if self.fee is not None:
            return pipeline_forward(lf, self.fee, self.det, spatial=self.spatial, dtype=dtype)
        if lf.spatial_res != (self.spatial, self.spatial):
            lf = resize_spatial(lf, self.spatial, self.spatial)
        return detector_forward(center_view(lf).transpose(2, 0, 1), self.det, dtype=dtype)[0]


def predict(checkpoint, lf_path, out_path, single_thread: bool = True) -> np.ndarray:
    """Write the saliency map as an 8-bit grayscale PNG; returns the float map."""
    model = Model.load(checkpoint)
    lf = load_light_field(lf_path)
    with _threads(single_thread):
        sal = model.predict_lf(lf)
    write_png(out_path, sal)
    return sal


def predict_maps(model: Model, dataset, single_thread: bool = True):
    pairs = _as_pairs(dataset)
    with _threads(single_thread):
        return [model.predict_lf(lf) for lf, _ in pairs], [m for _, m in pairs]


def to_grid(m: np.ndarray, shape) -> np.ndarray:
    """Resample a map to ``shape``: block means for integer shrink factors, linear otherwise."""
    m = np.asarray(m, dtype=float)
    (H, W), (h, w) = m.shape, tuple(shape)
    if (H, W) != (h, w) and H % h == 0 and W % w == 0:
        return m.reshape(h, H // h, w, W // w).mean(axis=(1, 3))
    return resize_map(m, shape)


def evaluate(checkpoint, dataset, mode="adaptive", csv_path=None, names=None, grid=None) -> MetricsReport:
    """Predict every light field and score against ground truth.

    Scoring happens on the saliency-map grid, or on ``grid`` if given so that
    models with different output sizes are compared on equal terms. Masks are
    resampled to that grid and kept where at least half a cell is salient.
    """
    model = checkpoint if isinstance(checkpoint, Model) else Model.load(checkpoint)
    preds, gts = predict_maps(model, dataset)
    shapes = [tuple(grid) if grid is not None else p.shape for p in preds]
    preds = [to_grid(p, s) for p, s in zip(preds, shapes)]
    gts = [to_grid(g, s) >= 0.5 for g, s in zip(gts, shapes)]
    if names is None and isinstance(dataset, DatasetIndex):
        names = dataset.ids
    report = evaluate_dataset(preds, gts, mode=mode, names=names)
    if csv_path is not None:
        report.write_csv(csv_path)
    return report
