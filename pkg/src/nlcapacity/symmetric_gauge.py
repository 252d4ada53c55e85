"""Symmetric gauge functions (norming functions) and their subgradients.

A norming function ``Phi`` acts on finite sequences through their decreasing
rearrangement of magnitudes and, through singular values, defines a unitarily
invariant norm on matrices.  Three families are supported:

``Lp(p)``
    the ordinary p-norm.
``LorentzP1(p)``
    the Lorentz (p, 1) norm ``sum_k s_k k**(-1 + 1/p)``.
``Weights(pi)``
    ``sum_j pi_j s_j`` for an explicit nonincreasing weight sequence with
    ``pi_1 = 1``; arguments longer than the sequence reuse its last weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "NormingFunction",
    "MagnitudeProfile",
    "Lp",
    "LorentzP1",
    "Weights",
    "parse_phi",
    "make_lorentz_weights",
    "evaluate_norm",
    "evaluate_norm_rows",
    "evaluate_singular_norm",
    "subgradient_vector",
    "subgradient_singular",
    "singular_values",
]

# Singular values below this fraction of the largest are ranked as zero.
RANK_CUTOFF = 1e-12


@dataclass(frozen=True)
class NormingFunction:
    """A symmetric gauge function.

    Build instances with :func:`Lp`, :func:`LorentzP1`, :func:`Weights` or
    :func:`parse_phi` rather than calling the constructor directly.
    """

    kind: str
    p: float = 1.0
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("lp", "lorentz", "weights"):
            raise ValueError(f"unknown norming function kind {self.kind!r}")
        if self.kind in ("lp", "lorentz"):
            if not (self.p >= 1.0) or math.isnan(self.p):
                raise ValueError(f"p must be >= 1, got {self.p}")
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.size == 0:
                raise ValueError("weight sequence must be nonempty")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be finite and positive")
            if np.any(np.diff(w) > 0):
                raise ValueError("weights must be nonincreasing")
            if w[0] != 1.0:
                raise ValueError("first weight must equal 1")

    @property
    def is_weighted(self) -> bool:
        """True when evaluation is a weighted sum of the rearrangement."""
        return self.kind != "lp" or self.p == 1.0

    def weights_for(self, n: int) -> np.ndarray:
        """Weight sequence of length ``n`` paired with a decreasing rearrangement.

        Only meaningful when :attr:`is_weighted`; ``Lp(1)`` gives all ones.
        """
        if self.kind == "weights":
            w = np.asarray(self.weights, dtype=float)
            if n <= w.size:
                return w[:n].copy()
            return np.concatenate([w, np.full(n - w.size, w[-1])])
        if self.kind == "lorentz":
            return make_lorentz_weights(self.p, n) if n else np.zeros(0)
        return np.ones(n)

    def __str__(self) -> str:
        if self.kind == "lp":
            if self.p == 1.0:
                return "l1"
            if self.p == 2.0:
                return "l2"
            return f"lp:{_fmt(self.p)}"
        if self.kind == "lorentz":
            return f"lorentz:{_fmt(self.p)}"
        return "weights:" + ",".join(_fmt(w) for w in self.weights)


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def Lp(p: float) -> NormingFunction:
    return NormingFunction("lp", float(p))


def LorentzP1(p: float) -> NormingFunction:
    return NormingFunction("lorentz", float(p))


def Weights(pi: Sequence[float]) -> NormingFunction:
    return NormingFunction("weights", weights=tuple(float(w) for w in pi))


def parse_phi(text: str) -> NormingFunction:
    """Parse ``l1``, ``l2``, ``lp:<p>``, ``lorentz:<p>`` or ``weights:<w1,w2,...>``.

    Raises ``ValueError`` for malformed specs and for ``p < 1``.
    """
    t = text.strip().lower()
    if t == "l1":
        return Lp(1.0)
    if t == "l2":
        return Lp(2.0)
    head, sep, arg = t.partition(":")
    if not sep or not arg:
        raise ValueError(f"malformed norming function {text!r}")
    if head == "weights":
        try:
            vals = [float(v) for v in arg.split(",")]
        except ValueError:
            raise ValueError(f"malformed weight list in {text!r}") from None
        return Weights(vals)
    try:
        p = float(arg)
    except ValueError:
        raise ValueError(f"malformed exponent in {text!r}") from None
    if head == "lp":
        return Lp(p)
    if head == "lorentz":
        return LorentzP1(p)
    raise ValueError(f"unknown norming function {text!r}")


@dataclass(frozen=True)
class MagnitudeProfile:
    """Decreasing rearrangement of magnitudes (or singular values)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(v < 0) or np.any(np.diff(v) > 0):
            raise ValueError("profile must be a nonnegative nonincreasing sequence")
        object.__setattr__(self, "values", v)

    @classmethod
    def of_vector(cls, x) -> "MagnitudeProfile":
        return cls(-np.sort(-np.abs(np.ravel(np.asarray(x)))))

    @classmethod
    def of_matrix(cls, m) -> "MagnitudeProfile":
        return cls(singular_values(m))

    def __len__(self) -> int:
        return self.values.size


def make_lorentz_weights(p: float, n: int) -> np.ndarray:
    """Return ``(j**(-1 + 1/p))`` for ``j = 1..n``."""
    if not (p >= 1.0):
        raise ValueError(f"Lorentz weights need p >= 1 (got {p}); quasi-norms are unsupported")
    if n < 1:
        raise ValueError("n must be a positive integer")
    j = np.arange(1, n + 1, dtype=float)
    return j ** (-1.0 + 1.0 / p)


# sums of squares inside this range are free of underflow and overflow
_SAFE_SQ = (1e-280, 1e280)


def _pnorm(a: np.ndarray, p: float) -> float:
    """p-norm of a nonnegative vector, scaled to avoid overflow."""
    if a.size == 0:
        return 0.0
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        with np.errstate(over="ignore", under="ignore"):
            s = float(a @ a)
        if _SAFE_SQ[0] < s < _SAFE_SQ[1]:
            return float(np.sqrt(s))
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * np.sum((a / m) ** p) ** (1.0 / p))


def evaluate_norm(phi: NormingFunction, x) -> float:
    """Apply ``phi`` to the decreasing rearrangement of ``|x|``.

    >>> evaluate_norm(LorentzP1(1), [3, 1, 2])
    6.0
    """
    a = np.abs(np.ravel(np.asarray(x)))
    if a.size == 0:
        return 0.0
    if not np.all(np.isfinite(a)):
        raise ValueError("argument has non-finite entries")
    if phi.kind == "lp":
        return _pnorm(a.astype(float), phi.p)
    s = -np.sort(-a)
    return float(s @ phi.weights_for(s.size))


def evaluate_norm_rows(phi: NormingFunction, a) -> np.ndarray:
    """:func:`evaluate_norm` applied along the last axis of ``a``."""
    a = np.abs(np.asarray(a, dtype=float))
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1])
    if phi.kind == "lp":
        if phi.p == 1.0:
            return a.sum(axis=-1)
        if phi.p == 2.0:
            with np.errstate(over="ignore", under="ignore"):
                sq = np.sum(a * a, axis=-1)
            if np.all((sq > _SAFE_SQ[0]) & (sq < _SAFE_SQ[1]) | (sq == 0) & ~np.any(a, axis=-1)):
                return np.sqrt(sq)
        m = a.max(axis=-1, keepdims=True)
        safe = np.where(m > 0, m, 1.0)
        return (safe * np.sum((a / safe) ** phi.p, axis=-1, keepdims=True) ** (1.0 / phi.p))[..., 0]
    s = -np.sort(-a, axis=-1)
    return s @ phi.weights_for(a.shape[-1])


def singular_values(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if m.size == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return np.linalg.svd(m, compute_uv=False)


def evaluate_singular_norm(phi: NormingFunction, m) -> float:
    """Unitarily invariant norm ``phi(s_1, s_2, ...)`` of a matrix."""
    return evaluate_norm(phi, singular_values(m))


def _phase(x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        a = np.abs(x)
        out = np.zeros_like(x)
        nz = a > 0
        out[nz] = x[nz] / a[nz]
        return out
    return np.sign(x)


def subgradient_vector(phi: NormingFunction, x) -> np.ndarray:
    """A subgradient ``g`` of ``phi`` at ``x`` with ``<g, x> = phi(x)``.

    For weighted gauges ``g_i = sign(x_i) * pi_rank(i)``; equal magnitudes are
    ranked by index.  The ``Lp`` gradient at zero is taken to be zero.
    """
    x = np.ravel(np.asarray(x))
    if x.size == 0:
        return np.zeros(0)
    a = np.abs(x)
    if phi.kind == "lp" and phi.p != 1.0:
        nrm = _pnorm(a, phi.p)
        if nrm == 0:
            return np.zeros_like(x, dtype=x.dtype if np.iscomplexobj(x) else float)
        if phi.p == 2.0:
            return x / nrm
        return _phase(x) * (a / nrm) ** (phi.p - 1.0)
    order = np.argsort(-a, kind="stable")
    w = np.empty(a.size)
    w[order] = phi.weights_for(a.size)
    return _phase(x) * w


def subgradient_singular(phi: NormingFunction, m) -> np.ndarray:
    """Subgradient ``U diag(w) V^H`` of the singular-value norm at ``m``."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if m.size == 0:
        return np.zeros_like(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    if s.size and s[0] > 0:
        s = np.where(s < RANK_CUTOFF * s[0], 0.0, s)
    w = subgradient_vector(phi, s)
    return (u * w) @ vh
