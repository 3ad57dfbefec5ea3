"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, NumericalError
from .ops import kink_trace
from .tensor import Tensor, backward

# (eps, relative-error threshold, denominator floor as a fraction of max |grad|)
TOLERANCES = {
    np.dtype(np.float32): (1e-3, 1e-2, 1e-2),
    np.dtype(np.float64): (1e-6, 1e-6, 1e-3),
}


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[int, tuple[int, ...]] | None  # (input index, element index)
    checked: int
    skipped_kinks: int

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold


def grad_check_report(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float | None = None,
    *,
    max_per_input: int | None = None,
    exclude: Sequence[np.ndarray | None] | None = None,
    skip_kinks: bool = True,
    floor_frac: float | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` against central differences for every input element.

    ``f(*inputs)`` must return a scalar tensor.  Inputs are perturbed in
    place (and restored), so ``f`` may also close over them, e.g. a model
    whose parameters are passed as ``inputs``.

    The relative error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``
    where ``floor`` is ``floor_frac`` times the largest analytic gradient
    magnitude, so coordinates with near-zero gradient are judged against the
    scale of the whole gradient rather than against rounding noise.
    ``exclude`` holds optional boolean masks of coordinates to skip.  With
    ``skip_kinks`` a coordinate is skipped when either perturbation moves a
    leaky_relu input across zero (see :func:`kink_trace`), or when its
    forward and backward one-sided differences disagree by more than half
    their magnitude, which catches kinks in ops that keep no trace.
    """
    dtype = inputs[0].dtype
    d_eps, _, d_floor = TOLERANCES.get(np.dtype(dtype), TOLERANCES[np.dtype(np.float32)])
    eps = d_eps if eps is None else eps
    floor_frac = d_floor if floor_frac is None else floor_frac
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}", field="eps")

    for t in inputs:
        t.grad = None
    with kink_trace() as base_trace:
        loss = f(*inputs)
    base = float(loss.data)
    if not np.isfinite(base):
        raise NumericalError(f"f returned non-finite value {base} at the unperturbed point")
    grads = backward(loss)
    rng = np.random.default_rng(seed)
    scale = max((float(np.abs(grads[id(t)]).max()) for t in inputs if id(t) in grads), default=0.0)
    floor = max(floor_frac * scale, np.finfo(dtype).tiny)

    worst_err, worst, checked, skipped = 0.0, None, 0, 0
    for k, t in enumerate(inputs):
        analytic = grads.get(id(t))
        analytic = np.zeros_like(t.data) if analytic is None else analytic
        if not np.all(np.isfinite(analytic)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(analytic))[0])
            raise NumericalError(f"non-finite analytic gradient for input {k} at {bad}")
        coords = list(np.ndindex(t.shape))
        if exclude is not None and exclude[k] is not None:
            coords = [c for c in coords if not exclude[k][c]]
        if max_per_input is not None and len(coords) > max_per_input:
            pick = rng.choice(len(coords), size=max_per_input, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            orig = t.data[idx].copy()
            t.data[idx] = orig + eps
            fp, crossed_p = _evaluate(f, inputs, base_trace)
            t.data[idx] = orig - eps
            fm, crossed_m = _evaluate(f, inputs, base_trace)
            t.data[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"non-finite value while perturbing input {k} at {idx}")
            num = (fp - fm) / (2 * eps)
            if skip_kinks and (crossed_p or crossed_m):
                skipped += 1
                continue
            if skip_kinks:
                fwd, bwd = (fp - base) / eps, (base - fm) / eps
                if abs(fwd - bwd) > 0.5 * max(abs(fwd), abs(bwd), floor):
                    skipped += 1
                    continue
            a = float(analytic[idx])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            checked += 1
            if worst is None or err > worst_err:
                worst_err, worst = err, (k, idx)
    return GradCheckReport(worst_err, worst, checked, skipped)


def _evaluate(f, inputs, base_trace) -> tuple[float, bool]:
    # value of f and whether any leaky_relu input changed sign relative to the base point
    with kink_trace() as trace:
        value = float(f(*inputs).data)
    crossed = len(trace) != len(base_trace) or any(
        a.shape != b.shape or not np.array_equal(a, b) for a, b in zip(trace, base_trace))
    return value, crossed


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float | None = None, **kw) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    return grad_check_report(f, inputs, eps, **kw).max_rel_error
