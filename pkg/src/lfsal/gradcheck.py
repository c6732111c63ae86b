"""Central finite-difference checks for graphs built with :mod:`lfsal.engine`."""
from __future__ import annotations

import numpy as np

from . import engine as E
from .functional import record_patterns


class NotDifferentiable(RuntimeError):
    """Every sampled probe of some tensor crossed a ReLU or max-pool switch."""

    def __init__(self, names):
        super().__init__(f"no differentiable probes found for {names}")
        self.names = names


def _same_patterns(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_check(fn, inputs: dict[str, np.ndarray], eps: float = 1e-3, n_probes: int = 20,
                            seed: int = 0, wrt=None, return_details: bool = False, max_resample: int = 50):
    """Max relative error between backprop and central differences.

    ``fn`` maps a dict of :class:`~lfsal.engine.Var` to an output ``Var``. The
    scalar under test is ``sum(R * fn(inputs))`` for a fixed random ``R``.
    For every tensor named in ``wrt`` (default: all) ``n_probes`` coordinates
    are sampled; a probe whose +/- eps evaluations switch any ReLU or max-pool
    decision is redrawn, since the function is not differentiable across it.
    Raises :class:`NotDifferentiable` if some tensor runs out of redraws.

    Error per probe is ``|a - n| / max(|a|, |n|, 1e-8)``. With
    ``return_details`` the result is ``(worst, {name: worst_for_name})``.
    """
    rng = np.random.default_rng(seed)
    inputs = {k: np.array(v, dtype=float) for k, v in inputs.items()}
    wrt = list(inputs) if wrt is None else list(wrt)

    leaves = {k: E.Var(v, requires_grad=k in wrt, name=k) for k, v in inputs.items()}
    out = fn(leaves)
    R = rng.standard_normal(out.shape)
    E.backward(out, R)
    analytic = {k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(inputs[k])) for k in wrt}

    def scalar():
        with record_patterns() as pats:
            val = float(np.sum(R * fn({k: E.Var(v) for k, v in inputs.items()}).value))
        return val, pats

    details, stuck = {}, []
    for name in wrt:
        errs = []
        base = inputs[name]
        tries = 0
        while len(errs) < n_probes and tries < n_probes + max_resample:
            tries += 1
            idx = tuple(int(rng.integers(n)) for n in base.shape)
            orig = base[idx]
            base[idx] = orig + eps
            fp, pp = scalar()
            base[idx] = orig - eps
            fm, pm = scalar()
            base[idx] = orig
            if not _same_patterns(pp, pm):
                continue
            num = (fp - fm) / (2 * eps)
            ana = float(analytic[name][idx])
            errs.append(abs(ana - num) / max(abs(ana), abs(num), 1e-8))
        if len(errs) < n_probes:
            stuck.append(name)
        else:
            details[name] = max(errs)
    if stuck:
        err = NotDifferentiable(stuck)
        err.details = details
        raise err
    worst = max(details.values(), default=0.0)
    return (worst, details) if return_details else worst


def check_over_points(fn, make_inputs, eps: float = 1e-3, n_probes: int = 20, max_points: int = 6,
                      max_resample: int = 30, wrt=None):
    """Run :func:`finite_difference_check` until every tensor has passed its probes.

    ``make_inputs(k)`` returns the k-th evaluation point. Tensors that cannot be
    probed at one point (all redraws hit a kink) are retried at the next.
    Returns ``{name: worst_error}``.
    """
    pending = None if wrt is None else list(wrt)
    done = {}
    for k in range(max_points):
        inputs = make_inputs(k)
        todo = list(inputs) if pending is None else pending
        try:
            _, det = finite_difference_check(fn, inputs, eps, n_probes, seed=k, wrt=todo,
                                             return_details=True, max_resample=max_resample)
            done.update(det)
            return done
        except NotDifferentiable as exc:
            done.update(exc.details)
            pending = exc.names
    raise NotDifferentiable(pending)
