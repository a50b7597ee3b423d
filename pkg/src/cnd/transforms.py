"""Scalar transforms with Gaussian smoothing in closed form.

``smooth(x, s)`` is ``E h(x + s Z)`` and ``smooth_sq(x, s)`` is
``E h(x + s Z)^2`` for standard normal ``Z``; both broadcast over arrays of
``x`` and ``s``.  These give exact conditional means and variances of
``h(Y_i)`` when ``Y_i`` is conditionally Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, ndtr

from .errors import InputError

KINDS = ("identity", "cube", "indicator", "sigmoid", "cosine", "constant")


@lru_cache(maxsize=16)
def hermite_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite nodes and weights normalised to sum to 1."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


@dataclass(frozen=True)
class Transform:
    kind: str
    param: float = 0.0
    scale: float = 1.0
    order: int = 32

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unsupported transform {self.kind!r}; choose from {KINDS}")
        if self.order < 2:
            raise InputError("quadrature order must be at least 2")

    @classmethod
    def parse(cls, spec) -> "Transform":
        """Accept a Transform, a kind name, or a mapping with kind/param/scale."""
        if isinstance(spec, Transform):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        if isinstance(spec, dict):
            return cls(spec["kind"], float(spec.get("param", 0.0)), float(spec.get("scale", 1.0)),
                       int(spec.get("order", 32)))
        raise InputError(f"cannot interpret transform {spec!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param, "scale": self.scale}

    @property
    def label(self) -> str:
        p = "" if self.kind in ("identity", "cube", "sigmoid") else f"({self.param:g})"
        s = "" if self.scale == 1.0 else f"*{self.scale:g}"
        return f"{self.kind}{p}{s}"

    @property
    def bound(self) -> float:
        """sup |h|, infinite for unbounded transforms."""
        if self.kind in ("indicator", "sigmoid", "cosine"):
            return abs(self.scale)
        if self.kind == "constant":
            return abs(self.scale * self.param)
        return math.inf

    def _base(self, x):
        k = self.kind
        if k == "identity":
            return x
        if k == "cube":
            return x * x * x
        if k == "indicator":
            return (x <= self.param).astype(float)
        if k == "sigmoid":
            return expit(x)
        if k == "cosine":
            return np.cos(self.param * x)
        return np.full_like(x, self.param, dtype=float)

    def __call__(self, x):
        return self.scale * self._base(np.asarray(x, dtype=float))

    def smooth(self, x, s):
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == "identity":
            out = x + 0.0 * s
        elif k == "cube":
            out = x * (x * x + 3.0 * s * s)
        elif k == "indicator":
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(s > 0, (self.param - x) / np.where(s > 0, s, 1.0), 0.0)
            out = np.where(s > 0, ndtr(z), (x <= self.param).astype(float))
        elif k == "sigmoid":
            t, w = hermite_nodes(self.order)
            out = np.tensordot(expit(x[..., None] + s[..., None] * t), w, axes=([-1], [0]))
        elif k == "cosine":
            out = np.cos(self.param * x) * np.exp(-0.5 * (self.param * s) ** 2)
        else:
            out = np.full(np.broadcast(x, s).shape, self.param, dtype=float)
        return self.scale * out

    def smooth_sq(self, x, s):
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == "identity":
            out = x**2 + s**2
        elif k == "cube":
            x2, s2 = x * x, s * s
            out = x2 * (x2 * (x2 + 15.0 * s2) + 45.0 * s2 * s2) + 15.0 * s2 * s2 * s2
        elif k == "indicator":
            return self.scale * self.smooth(x, s)
        elif k == "sigmoid":
            t, w = hermite_nodes(self.order)
            out = np.tensordot(expit(x[..., None] + s[..., None] * t) ** 2, w, axes=([-1], [0]))
        elif k == "cosine":
            out = 0.5 * (1.0 + np.cos(2 * self.param * x) * np.exp(-2.0 * (self.param * s) ** 2))
        else:
            out = np.full(np.broadcast(x, s).shape, self.param**2, dtype=float)
        return self.scale**2 * out

    def cond_var(self, x, s):
        return np.maximum(self.smooth_sq(x, s) - self.smooth(x, s) ** 2, 0.0)


IDENTITY = Transform("identity")
CUBE = Transform("cube")
SIGMOID = Transform("sigmoid")


def indicator(t: float, scale: float = 1.0) -> Transform:
    return Transform("indicator", float(t), scale)


def cosine(omega: float, scale: float = 1.0) -> Transform:
    return Transform("cosine", float(omega), scale)


def constant(c: float) -> Transform:
    return Transform("constant", float(c))
