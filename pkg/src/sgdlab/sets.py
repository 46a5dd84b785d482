"""Closed convex constraint sets with exact Euclidean nearest-point maps.

Each set kind implements ``project`` (closed form, idempotent, a
contraction), ``contains`` (within a distance tolerance), and
``in_interior`` (whether a Euclidean ball of a given margin fits inside).
``project`` accepts a single point ``(p,)`` or a batch of rows ``(m, p)``;
rows already inside the set pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ConstraintSet", "WholeSpace", "Ball", "Box", "Simplex", "Halfspace", "set_from_config"]


def _sumsq(v: np.ndarray):
    # one reduction used by every path so batch and scalar rounding agree
    return (v * v).sum(axis=-1)


class ConstraintSet:
    """Shared behaviour for all set kinds."""

    kind: str = "abstract"

    def project(self, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, f: np.ndarray):
        d = np.asarray(f, dtype=float) - self.project(f)
        return np.sqrt(_sumsq(d))

    def contains(self, f: np.ndarray, tol: float = 1e-12):
        """True when the distance from ``f`` to the set is at most ``tol``."""
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return self.distance(f) <= tol

    def in_interior(self, f: np.ndarray, margin: float) -> bool:
        raise NotImplementedError

    def diameter_proxy(self) -> float:
        """Scale used by the divergence guard; 0 for unbounded sets."""
        return 0.0

    def to_config(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def _check_margin(margin: float) -> None:
        if margin <= 0:
            raise ValueError("margin must be positive")


class WholeSpace(ConstraintSet):
    """No constraint: the projection is the identity."""

    kind = "whole-space"

    def project(self, f):
        return np.asarray(f, dtype=float)

    def in_interior(self, f, margin):
        self._check_margin(margin)
        return True

    def to_config(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Ball(ConstraintSet):
    """Euclidean ball; ``center=None`` means the origin in any dimension."""

    radius: float
    center: np.ndarray | None = None
    kind = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.center is not None:
            c = np.asarray(self.center, dtype=float)
            if not np.all(np.isfinite(c)):
                raise ValueError("ball center must be finite")
            object.__setattr__(self, "center", c)

    def _centered(self, f):
        return f if self.center is None else f - self.center

    def project(self, f):
        f = np.asarray(f, dtype=float)
        d = self._centered(f)
        if f.ndim == 1:
            n = float(np.sqrt(_sumsq(d)))
            if n <= self.radius:
                return f
            out = d * (self.radius / n)
            return out if self.center is None else self.center + out
        n = np.sqrt(_sumsq(d))
        outside = n > self.radius
        if not np.any(outside):
            return f
        out = f.copy()
        scale = (self.radius / n[outside])[:, None]
        scaled = d[outside] * scale
        out[outside] = scaled if self.center is None else self.center + scaled
        return out

    def in_interior(self, f, margin):
        self._check_margin(margin)
        n = float(np.sqrt(_sumsq(self._centered(np.asarray(f, dtype=float)))))
        return n + margin <= self.radius

    def diameter_proxy(self):
        return 2.0 * self.radius

    def to_config(self):
        cfg = {"kind": self.kind, "radius": float(self.radius)}
        if self.center is not None:
            cfg["center"] = [float(v) for v in self.center]
        return cfg


@dataclass(frozen=True)
class Box(ConstraintSet):
    """Axis-aligned box ``lo <= f <= hi`` (coordinatewise)."""

    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, f):
        return np.clip(np.asarray(f, dtype=float), self.lo, self.hi)

    def in_interior(self, f, margin):
        self._check_margin(margin)
        f = np.asarray(f, dtype=float)
        return bool(np.all(f - margin >= self.lo) and np.all(f + margin <= self.hi))

    def diameter_proxy(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def to_config(self):
        return {"kind": self.kind, "lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}


@dataclass(frozen=True)
class Simplex(ConstraintSet):
    """Scaled probability simplex ``{f : f >= 0, sum f = scale}``.

    Projection by the sort-and-threshold rule, exact in O(p log p).  The
    simplex has empty interior as a subset of R^p, so ``in_interior`` is
    always False.
    """

    scale: float = 1.0
    kind = "simplex"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("simplex scale must be positive")

    def project(self, f):
        f = np.asarray(f, dtype=float)
        squeeze = f.ndim == 1
        v = f[None, :] if squeeze else f
        p = v.shape[1]
        u = np.sort(v, axis=1)[:, ::-1]
        css = np.cumsum(u, axis=1)
        j = np.arange(1, p + 1, dtype=float)
        cond = u * j > (css - self.scale)
        # cond[:, 0] is always True (scale > 0), so argmax below is safe
        rho = p - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = (css[np.arange(v.shape[0]), rho] - self.scale) / (rho + 1.0)
        w = np.maximum(v - theta[:, None], 0.0)
        return w[0] if squeeze else w

    def in_interior(self, f, margin):
        self._check_margin(margin)
        return False

    def diameter_proxy(self):
        return float(self.scale * np.sqrt(2.0))

    def to_config(self):
        return {"kind": self.kind, "scale": float(self.scale)}


@dataclass(frozen=True)
class Halfspace(ConstraintSet):
    """Halfspace ``{f : <normal, f> <= offset}``."""

    normal: np.ndarray
    offset: float
    kind = "halfspace"

    def __post_init__(self):
        a = np.asarray(self.normal, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)) or np.linalg.norm(a) == 0.0:
            raise ValueError("halfspace normal must be a finite nonzero vector")
        object.__setattr__(self, "normal", a)

    def project(self, f):
        f = np.asarray(f, dtype=float)
        a = self.normal
        sq = float(_sumsq(a))
        viol = (f * a).sum(axis=-1) - self.offset
        if f.ndim == 1:
            if viol <= 0:
                return f
            return f - (float(viol) / sq) * a
        out = f.copy()
        mask = viol > 0
        if np.any(mask):
            out[mask] = f[mask] - (viol[mask] / sq)[:, None] * a
        return out

    def in_interior(self, f, margin):
        self._check_margin(margin)
        f = np.asarray(f, dtype=float)
        return float(f @ self.normal) + margin * float(np.linalg.norm(self.normal)) <= self.offset

    def to_config(self):
        return {"kind": self.kind, "normal": [float(v) for v in self.normal], "offset": float(self.offset)}


def set_from_config(cfg: dict, dimension: int) -> ConstraintSet:
    """Build a constraint set from its serialized form (see to_config)."""
    kind = cfg.get("kind", "whole-space")
    if kind == "whole-space":
        return WholeSpace()
    if kind == "ball":
        center = cfg.get("center")
        return Ball(radius=float(cfg["radius"]), center=None if center is None else np.asarray(center, float))
    if kind == "box":
        lo, hi = cfg["lo"], cfg["hi"]
        lo = np.full(dimension, float(lo)) if np.isscalar(lo) else np.asarray(lo, float)
        hi = np.full(dimension, float(hi)) if np.isscalar(hi) else np.asarray(hi, float)
        return Box(lo=lo, hi=hi)
    if kind == "simplex":
        return Simplex(scale=float(cfg.get("scale", 1.0)))
    if kind == "halfspace":
        return Halfspace(normal=np.asarray(cfg["normal"], float), offset=float(cfg["offset"]))
    raise ValueError(f"unknown constraint-set kind {kind!r}")
