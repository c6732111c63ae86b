"""Wall-clock benchmark of the full light-field pipeline."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .detector import build_detector, detector_macs, pipeline_forward
from .fee import build_fee, fee_macs
from .functional import count_macs
from .lightfield import LightField
from .training import Model

FULL_ANGULAR = 9
FULL_SPATIAL = 512
RAW_SPATIAL = (512, 375)  # views of one 4608-wide crop before resizing


def closed_form_macs(fee, det, spatial: int) -> int:
    """Sum over conv layers of ``C_out * C_in * kh * kw * H_out * W_out``."""
    side = spatial * FULL_ANGULAR
    total = sum(fee_macs(side, side)) if fee is not None else 0
    grid = spatial // 2 if fee is not None else spatial
    return total + detector_macs(det, grid, grid)


@dataclass
class BenchReport:
    times: list[float]
    warmup: int
    threads: int
    profile: str
    input_shape: tuple
    macs_counted: int
    macs_closed_form: int
    output_shape: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.times or min(self.times) <= 0:
            raise ValueError("benchmark times must be positive and non-empty")

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.times, 95))

    @property
    def macs_match(self) -> bool:
        return self.macs_counted == self.macs_closed_form

    def as_dict(self) -> dict:
        d = {
            "n_runs": len(self.times),
            "times": " ".join(f"{t:.4f}" for t in self.times),
            "mean": f"{self.mean:.4f}",
            "median": f"{self.median:.4f}",
            "p95": f"{self.p95:.4f}",
            "min": f"{min(self.times):.4f}",
            "max": f"{max(self.times):.4f}",
            "warmup": self.warmup,
            "threads": self.threads,
            "profile": self.profile,
            "input_shape": "x".join(map(str, self.input_shape)),
            "output_shape": "x".join(map(str, self.output_shape)),
            "macs_counted": self.macs_counted,
            "macs_closed_form": self.macs_closed_form,
            "macs_match": self.macs_match,
        }
        d.update(self.extra)
        return d

    def write_kv(self, path) -> None:
        Path(path).write_text("".join(f"{k} = {v}\n" for k, v in self.as_dict().items()))


def _blas_threads() -> int:
    info = threadpool_info()
    return max((i.get("num_threads", 1) for i in info), default=1)


def bench(checkpoint=None, n_runs: int = 3, warmup: int = 1, threads: int | None = None,
          profile: str = "full", spatial: int = FULL_SPATIAL, seed: int = 0, dtype=None) -> BenchReport:
    """Time ``pipeline_forward`` on a random ``9x9x512x375`` light field.

    The field is resized to ``spatial x spatial`` views inside the timed call,
    so the timing covers resize, packing, FEE and detector. Without a
    checkpoint, randomly initialised ``profile`` weights are used. MACs are
    counted on the first timed run and compared with the closed form.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if checkpoint is None:
        fee, det, label = build_fee(seed), build_detector(profile, seed + 1), profile
    else:
        model = checkpoint if isinstance(checkpoint, Model) else Model.load(checkpoint)
        fee, det, label = model.fee, model.det, f"checkpoint:{checkpoint}"
    rng = np.random.default_rng(seed)
    lf = LightField(rng.uniform(0, 1, (FULL_ANGULAR, FULL_ANGULAR) + RAW_SPATIAL + (3,)))

    def run():
        if fee is None:
            raise ValueError("benchmark needs a checkpoint with FEE parameters")
        return pipeline_forward(lf, fee, det, spatial=spatial, dtype=dtype)

    limits = threadpool_limits(limits=threads) if threads else None
    try:
        n_threads = _blas_threads()
        for _ in range(warmup):
            run()
        times, counted, out = [], 0, None
        for i in range(n_runs):
            if i == 0:
                with count_macs() as counter:
                    t0 = time.perf_counter()
                    out = run()
                    times.append(time.perf_counter() - t0)
                counted = counter[0]
            else:
                t0 = time.perf_counter()
                run()
                times.append(time.perf_counter() - t0)
    finally:
        if limits is not None:
            limits.restore_original_limits()
    return BenchReport(times, warmup, n_threads, label, lf.data.shape, counted,
                       closed_form_macs(fee, det, spatial), out.shape,
                       {"dtype": np.dtype(dtype or float).name,
                        "mla_input": f"{spatial * FULL_ANGULAR}x{spatial * FULL_ANGULAR}",
                        "output_checksum": f"{float(np.sum(out)):.10e}"})
