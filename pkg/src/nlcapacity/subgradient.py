"""Projected subgradient minimisation over a compact convex set.

The engine is shared by the graph condenser solver and the matrix modulus
solver.  It works on flat float arrays and only needs the objective, one
subgradient per point and the exact Euclidean projection onto the feasible
set.

Step rules
----------
``polyak``
    Polyak steps toward an adaptive target level ``f_rec - delta`` (the
    best value so far minus an estimated gap).  ``delta`` grows after each
    sufficient decrease and is halved when the iterates travel farther than
    the feasible-set diameter without reaching the target.
``diminishing``
    normalised steps ``c * diameter / sqrt(t + 1)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

__all__ = ["SolverOptions", "SubgradientResult", "minimize"]

STEP_RULES = ("polyak", "diminishing")


@dataclass(frozen=True)
class SolverOptions:
    """Options shared by every projected-subgradient solve.

    ``tol`` is a relative tolerance: every ``window`` iterations the run stops
    if the best value improved by at most ``tol`` (relative) over the second
    half of the iterations so far.  Subgradient methods converge sublinearly,
    so a stall over half the run is a scale-free sign that further progress
    would need many times more work.
    ``seed`` is recorded for replay; the iteration itself is deterministic.
    """

    max_iters: int = 50_000
    step_rule: str = "polyak"
    tol: float = 1e-4
    window: int = 200
    min_iters: int = 2000
    seed: int = 0
    round_every: int = 250
    step_scale: float = 0.5

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.step_rule!r}; choose from {STEP_RULES}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class SubgradientResult:
    x: np.ndarray
    value: float
    iterations: int
    tolerance_met: bool
    history: np.ndarray = field(repr=False)


def minimize(
    fun: Callable[[np.ndarray], float],
    subgradient: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    diameter: float,
    options: SolverOptions = SolverOptions(),
    tangent: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    candidates: Optional[Callable[[np.ndarray], Iterable[np.ndarray]]] = None,
) -> SubgradientResult:
    """Minimise a convex ``fun`` over the set onto which ``project`` projects.

    Parameters
    ----------
    diameter
        Bound on the diameter of the feasible set; scales the step rules.
    tangent
        Optional map ``(x, g) -> d`` returning the part of ``g`` that does not
        push against active constraints at ``x``.
    candidates
        Optional generator of extra feasible points, queried every
        ``options.round_every`` iterations at the best point; a better
        candidate becomes the new iterate.
    """
    opts = options
    x0 = np.asarray(x0)
    x = project(x0.astype(np.result_type(x0.dtype, float)))
    f = fun(x)
    best, xbest = f, x.copy()
    history = [best]
    diameter = max(float(diameter), 1e-12)
    delta = max(0.1 * abs(f), 1e-12)
    f_rec = f
    path = 0.0
    x_sum, n_sum = np.zeros_like(x), 0
    converged = False
    t = 0

    def scale() -> float:
        return max(abs(best), 1e-300)

    for t in range(1, opts.max_iters + 1):
        if best <= 0.0:
            converged = True
            break
        g = subgradient(x)
        d = tangent(x, g) if tangent is not None else g
        nn = float(np.vdot(d, d).real)
        if nn <= 1e-300:
            # no feasible descent direction from x
            if np.array_equal(x, xbest):
                converged = True
                break
            x, f = xbest.copy(), best
            continue
        if opts.step_rule == "polyak":
            alpha = (f - (f_rec - delta)) / nn
        else:
            alpha = opts.step_scale * diameter / np.sqrt(t) / np.sqrt(nn)
        xn = project(x - alpha * d)
        path += float(np.linalg.norm(xn - x))
        x = xn
        x_sum += x
        n_sum += 1
        f = fun(x)
        if f < best:
            best, xbest = f, x.copy()
        if opts.step_rule == "polyak":
            if f <= f_rec - 0.5 * delta:
                f_rec = best
                path = 0.0
                delta *= 1.5
            elif path > diameter:
                delta *= 0.5
                path = 0.0
                f_rec = best
                x, f = xbest.copy(), best
        if opts.round_every and t % opts.round_every == 0:
            improved = False
            pool = [project(x_sum / max(n_sum, 1))]
            x_sum[...] = 0.0
            n_sum = 0
            if candidates is not None:
                pool = itertools.chain(pool, candidates(xbest))
            for c in pool:
                fc = fun(c)
                if fc < best:
                    best, xbest, improved = fc, np.array(c, dtype=x.dtype), True
            if improved:
                x, f = xbest.copy(), best
                f_rec = best
                path = 0.0
        history.append(best)
        if t >= opts.window and t % opts.window == 0:
            if t >= opts.min_iters and history[t // 2] - best <= opts.tol * scale():
                converged = True
                break
    if candidates is not None:
        for c in candidates(xbest):
            fc = fun(c)
            if fc < best:
                best, xbest = fc, np.array(c, dtype=x.dtype)
        history.append(best)
    return SubgradientResult(xbest, float(best), t, converged, np.asarray(history))
