"""Triplet losses, their analytic gradients, and the curriculum combination.

Seven base losses operate on a batch of N (anchor, positive, negative)
descriptor triples:

    TL  mean_i [d_ap_i - d_an_i + m]+
    LE  mean_i [d_ap_i + ln(exp(m - d_an_i) + exp(m - d_pn_i))]+
    LT  [max_i (d_ap_i - d_an_i + m)]+
    SH  mean_i [d_ap_i - min_j d_an_j + m]+
    BH  [max_i d_ap_i - min_j d_an_j + m]+
    CL  ln(1 + sum_j exp(g*an_j*s_n_j) + sum_i exp(-g*ap_i*s_p_i)),
            ap_i = [1 - m - s_p_i]+,  an_j = [s_n_j - m]+
    AL  ln(1 + sum_i exp(4 t (a_i + p_i).n_i - 2 (1 + t) a_i.p_i)),  t = tan^2(alpha)

The curriculum kinds blend two of them, ``w * L1 + (1 - w) * L2``, with the
weight sliding from 1 to 0 over training.

Gradients are computed through the intermediate quantities (distances and
similarities) and then chained to the descriptor entries.  Conventions: a
hinge at exactly zero contributes nothing; max/min selections route the
gradient to the first (lowest) index; a zero distance has zero gradient.
Similarities are plain dot products, clamped to [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionMismatch, InvalidKind, MissingParam, StepOutOfRange

BASE_KINDS = ("TL", "LE", "LT", "SH", "BH", "CL", "AL")
CURRICULUM_KINDS = {
    "CV_TL_LT": ("TL", "LT"),
    "CV_TL_BH": ("TL", "BH"),
    "CV_LT_BH": ("LT", "BH"),
}
ALL_KINDS = BASE_KINDS + tuple(CURRICULUM_KINDS)

_NEEDS_MARGIN = {"TL", "LE", "LT", "SH", "BH", "CL"}


@dataclass(frozen=True)
class TripletBatch:
    """Aligned (N, D) arrays of anchor, positive and negative descriptors."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        arrays = []
        for name in ("anchors", "positives", "negatives"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise DimensionMismatch(f"{name} must be 2-D (N, D), got shape {arr.shape}")
            object.__setattr__(self, name, arr)
            arrays.append(arr)
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise DimensionMismatch(f"anchors/positives/negatives shapes differ: {sorted(shapes)}")
        if arrays[0].shape[0] < 1:
            raise DimensionMismatch("batch must contain at least one triplet")

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


@dataclass(frozen=True)
class DistanceProfile:
    d_ap: np.ndarray
    d_an: np.ndarray
    d_pn: np.ndarray
    s_p: np.ndarray
    s_n: np.ndarray

    @classmethod
    def from_values(cls, d_ap, d_an, d_pn=None, s_p=None, s_n=None) -> "DistanceProfile":
        """Build a profile from hand-specified quantities; missing ones are zero."""
        d_ap = np.atleast_1d(np.asarray(d_ap, dtype=np.float64))
        zeros = np.zeros_like(d_ap)

        def vec(v):
            return zeros.copy() if v is None else np.atleast_1d(np.asarray(v, dtype=np.float64))

        return cls(d_ap, vec(d_an), vec(d_pn), vec(s_p), vec(s_n))

    @property
    def size(self) -> int:
        return self.d_ap.shape[0]


@dataclass(frozen=True)
class LossParams:
    margin: float | None = None
    gamma: float | None = None
    alpha_deg: float | None = None

    def __post_init__(self):
        if self.margin is not None and self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.alpha_deg is not None and not 0.0 < self.alpha_deg < 90.0:
            raise ValueError(f"alpha must lie in (0, 90) degrees, got {self.alpha_deg}")


# --------------------------------------------------------------------------
# weight schedules

def _linear(frac: float) -> float:
    return 1.0 - frac


def _cosine(frac: float) -> float:
    return 0.5 * (1.0 + math.cos(math.pi * frac))


SCHEDULES: dict[str, Callable[[float], float]] = {"linear": _linear, "cosine": _cosine}


def curriculum_weight(step: int, total: int, shape: str = "linear") -> float:
    """Weight of the lenient component after ``step`` of ``total`` units.

    Equals 1 at step 0 and 0 at ``step == total`` for every shape.
    """
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    if not 0 <= step <= total:
        raise StepOutOfRange(f"step {step} outside [0, {total}]")
    try:
        fn = SCHEDULES[shape]
    except KeyError:
        raise ValueError(f"unknown schedule shape {shape!r}; known: {sorted(SCHEDULES)}") from None
    if step == 0:
        return 1.0
    if step == total:
        return 0.0
    return min(1.0, max(0.0, fn(step / total)))


@dataclass(frozen=True)
class WeightSchedule:
    shape: str = "linear"
    total: int | None = None

    def __post_init__(self):
        if self.shape not in SCHEDULES:
            raise ValueError(f"unknown schedule shape {self.shape!r}")

    def weight(self, step: int, total: int | None = None) -> float:
        total = self.total if total is None else total
        if total is None:
            raise MissingParam("schedule has no total step count")
        return curriculum_weight(step, total, self.shape)


@dataclass(frozen=True)
class LossSpec:
    kind: str
    params1: LossParams
    params2: LossParams | None = None
    schedule: WeightSchedule = field(default_factory=WeightSchedule)

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise InvalidKind(f"unknown loss kind {self.kind!r}")
        if self.is_curriculum != (self.params2 is not None):
            raise ValueError(f"{self.kind}: second parameter set must be given iff the kind is a curriculum blend")
        for kind, params in self.components():
            _require_params(kind, params)

    @property
    def is_curriculum(self) -> bool:
        return self.kind in CURRICULUM_KINDS

    def components(self) -> list[tuple[str, LossParams]]:
        if self.is_curriculum:
            k1, k2 = CURRICULUM_KINDS[self.kind]
            return [(k1, self.params1), (k2, self.params2)]
        return [(self.kind, self.params1)]

    def to_config(self) -> dict[str, str]:
        """Flat ``key -> str`` mapping for a ``[loss]`` config section."""
        out = {"kind": self.kind, "schedule": self.schedule.shape}
        for suffix, params in (("1", self.params1), ("2", self.params2)):
            if params is None:
                continue
            for key, value in (("m", params.margin), ("gamma", params.gamma), ("alpha", params.alpha_deg)):
                if value is not None:
                    out[key + suffix] = repr(float(value))
        return out

    @classmethod
    def from_config(cls, section: Mapping[str, str]) -> "LossSpec":
        kind = section.get("kind")
        if kind is None:
            raise MissingParam("loss section lacks 'kind'")
        kind = kind.strip().upper()

        def params(suffix):
            vals = {}
            for key, name in (("m", "margin"), ("gamma", "gamma"), ("alpha", "alpha_deg")):
                raw = section.get(key + suffix)
                if raw is None and suffix == "1":
                    raw = section.get(key)
                if raw not in (None, ""):
                    vals[name] = float(raw)
            return LossParams(**vals)

        p2 = params("2") if kind in CURRICULUM_KINDS else None
        return cls(kind, params("1"), p2, WeightSchedule(section.get("schedule", "linear").strip()))


def _require_params(kind: str, params: LossParams) -> None:
    if kind in _NEEDS_MARGIN and params.margin is None:
        raise MissingParam(f"{kind} requires a margin")
    if kind == "CL" and params.gamma is None:
        raise MissingParam("CL requires a scale factor gamma")
    if kind == "AL" and params.alpha_deg is None:
        raise MissingParam("AL requires an angle alpha")


# --------------------------------------------------------------------------
# shared precomputation

def _pair_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((x - y) ** 2, axis=1))


def distance_profile(batch: TripletBatch) -> DistanceProfile:
    a, p, n = batch.anchors, batch.positives, batch.negatives
    return DistanceProfile(
        d_ap=_pair_distance(a, p),
        d_an=_pair_distance(a, n),
        d_pn=_pair_distance(p, n),
        s_p=np.clip(np.einsum("ij,ij->i", a, p), -1.0, 1.0),
        s_n=np.clip(np.einsum("ij,ij->i", a, n), -1.0, 1.0),
    )


def _hinge(x):
    return np.maximum(x, 0.0)


def _log1p_sum_exp(z: np.ndarray) -> tuple[float, np.ndarray]:
    """Stable ln(1 + sum exp z) and its gradient (softmax weights over z)."""
    top = max(0.0, float(np.max(z)))
    ez = np.exp(z - top)
    total = math.exp(-top) + float(np.sum(ez))
    return top + math.log(total), ez / total


def _al_scores(batch: TripletBatch, alpha_deg: float) -> np.ndarray:
    t = math.tan(math.radians(alpha_deg)) ** 2
    a, p, n = batch.anchors, batch.positives, batch.negatives
    return 4.0 * t * np.einsum("ij,ij->i", a + p, n) - 2.0 * (1.0 + t) * np.einsum("ij,ij->i", a, p)


# --------------------------------------------------------------------------
# per-kind evaluation; each returns (value, grads over profile quantities)

def _zeros_like_profile(prof):
    z = np.zeros_like(prof.d_ap)
    return {"d_ap": z.copy(), "d_an": z.copy(), "d_pn": z.copy(), "s_p": z.copy(), "s_n": z.copy()}


def _tl(prof, prm, grad):
    pre = prof.d_ap - prof.d_an + prm.margin
    value = float(np.mean(_hinge(pre)))
    if grad is not None:
        active = (pre > 0).astype(np.float64) / prof.size
        grad["d_ap"] += active
        grad["d_an"] -= active
    return value


def _le(prof, prm, grad):
    m = prm.margin
    lse = np.logaddexp(m - prof.d_an, m - prof.d_pn)
    pre = prof.d_ap + lse
    value = float(np.mean(_hinge(pre)))
    if grad is not None:
        active = (pre > 0).astype(np.float64) / prof.size
        grad["d_ap"] += active
        grad["d_an"] -= active * np.exp(m - prof.d_an - lse)
        grad["d_pn"] -= active * np.exp(m - prof.d_pn - lse)
    return value


def _lt(prof, prm, grad):
    v = prof.d_ap - prof.d_an + prm.margin
    k = int(np.argmax(v))
    value = max(float(v[k]), 0.0)
    if grad is not None and v[k] > 0:
        grad["d_ap"][k] += 1.0
        grad["d_an"][k] -= 1.0
    return value


def _sh(prof, prm, grad):
    j = int(np.argmin(prof.d_an))
    pre = prof.d_ap - prof.d_an[j] + prm.margin
    value = float(np.mean(_hinge(pre)))
    if grad is not None:
        active = (pre > 0).astype(np.float64) / prof.size
        grad["d_ap"] += active
        grad["d_an"][j] -= float(np.sum(active))
    return value


def _bh(prof, prm, grad):
    i = int(np.argmax(prof.d_ap))
    j = int(np.argmin(prof.d_an))
    pre = prof.d_ap[i] - prof.d_an[j] + prm.margin
    value = max(float(pre), 0.0)
    if grad is not None and pre > 0:
        grad["d_ap"][i] += 1.0
        grad["d_an"][j] -= 1.0
    return value


def _cl(prof, prm, grad):
    g, m = prm.gamma, prm.margin
    w_p = _hinge((1.0 - m) - prof.s_p)
    w_n = _hinge(prof.s_n - m)
    z = np.concatenate([g * w_n * prof.s_n, -g * w_p * prof.s_p])
    value, soft = _log1p_sum_exp(z)
    if grad is not None:
        n = prof.size
        soft_n, soft_p = soft[:n], soft[n:]
        # the weights depend on the similarities too; differentiate through them
        grad["s_n"] += soft_n * g * (w_n + prof.s_n * (prof.s_n - m > 0))
        grad["s_p"] -= soft_p * g * (w_p - prof.s_p * ((1.0 - m) - prof.s_p > 0))
    return value


_PROFILE_LOSSES = {"TL": _tl, "LE": _le, "LT": _lt, "SH": _sh, "BH": _bh, "CL": _cl}


def _check_base(kind: str, params: LossParams) -> None:
    if kind in CURRICULUM_KINDS:
        raise InvalidKind(f"{kind} is a curriculum blend; use curriculum_forward/curriculum_gradient")
    if kind not in BASE_KINDS:
        raise InvalidKind(f"unknown loss kind {kind!r}")
    _require_params(kind, params)


def loss_forward(kind: str, params: LossParams, data: TripletBatch | DistanceProfile) -> float:
    """Scalar value of a base loss on a batch (or a precomputed profile)."""
    _check_base(kind, params)
    if kind == "AL":
        if not isinstance(data, TripletBatch):
            raise TypeError("AL needs the raw descriptors, not a distance profile")
        value, _ = _log1p_sum_exp(_al_scores(data, params.alpha_deg))
        return value
    prof = data if isinstance(data, DistanceProfile) else distance_profile(data)
    return _PROFILE_LOSSES[kind](prof, params, None)


def _chain_profile(batch: TripletBatch, grad: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, p, n = batch.anchors, batch.positives, batch.negatives
    ga = np.zeros_like(a)
    gp = np.zeros_like(p)
    gn = np.zeros_like(n)

    def dist(x, y, coeff, gx, gy):
        if not np.any(coeff):
            return
        diff = x - y
        d = np.sqrt(np.sum(diff ** 2, axis=1))
        safe = np.where(d > 0, d, 1.0)
        scale = np.where(d > 0, coeff / safe, 0.0)[:, None]
        gx += scale * diff
        gy -= scale * diff

    dist(a, p, grad["d_ap"], ga, gp)
    dist(a, n, grad["d_an"], ga, gn)
    dist(p, n, grad["d_pn"], gp, gn)

    for other, g_other, key in ((p, gp, "s_p"), (n, gn, "s_n")):
        coeff = grad[key]
        if not np.any(coeff):
            continue
        raw = np.einsum("ij,ij->i", a, other)
        coeff = np.where(np.abs(raw) <= 1.0, coeff, 0.0)[:, None]  # clamp is flat outside
        ga += coeff * other
        g_other += coeff * a
    return ga, gp, gn


def loss_gradient(kind: str, params: LossParams, batch: TripletBatch):
    """Gradients of ``loss_forward`` w.r.t. anchors, positives and negatives."""
    _check_base(kind, params)
    if kind == "AL":
        t = math.tan(math.radians(params.alpha_deg)) ** 2
        _, soft = _log1p_sum_exp(_al_scores(batch, params.alpha_deg))
        a, p, n = batch.anchors, batch.positives, batch.negatives
        s = soft[:, None]
        ga = s * (4.0 * t * n - 2.0 * (1.0 + t) * p)
        gp = s * (4.0 * t * n - 2.0 * (1.0 + t) * a)
        gn = s * (4.0 * t * (a + p))
        return ga, gp, gn
    prof = distance_profile(batch)
    grad = _zeros_like_profile(prof)
    _PROFILE_LOSSES[kind](prof, params, grad)
    return _chain_profile(batch, grad)


def hinge_arguments(kind: str, params: LossParams, batch: TripletBatch) -> np.ndarray:
    """Every quantity a hinge is applied to while evaluating ``kind``.

    Used to keep finite-difference checks away from kinks.  Curriculum kinds
    report the union over both components.
    """
    if kind in CURRICULUM_KINDS:
        raise InvalidKind("pass the component kinds individually")
    _check_base(kind, params)
    if kind == "AL":
        return np.empty(0)
    prof = distance_profile(batch)
    m = params.margin
    if kind == "TL":
        return prof.d_ap - prof.d_an + m
    if kind == "LE":
        return prof.d_ap + np.logaddexp(m - prof.d_an, m - prof.d_pn)
    if kind == "LT":
        return np.array([np.max(prof.d_ap - prof.d_an + m)])
    if kind == "SH":
        return prof.d_ap - np.min(prof.d_an) + m
    if kind == "BH":
        return np.array([np.max(prof.d_ap) - np.min(prof.d_an) + m])
    return np.concatenate([(1.0 - m) - prof.s_p, prof.s_n - m])


# --------------------------------------------------------------------------
# curriculum blends

def _curriculum_parts(spec: LossSpec, w: float):
    if not spec.is_curriculum:
        raise InvalidKind(f"{spec.kind} is not a curriculum blend")
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    return spec.components()


def curriculum_forward(spec: LossSpec, w: float, batch: TripletBatch) -> float:
    (k1, p1), (k2, p2) = _curriculum_parts(spec, w)
    return w * loss_forward(k1, p1, batch) + (1.0 - w) * loss_forward(k2, p2, batch)


def curriculum_gradient(spec: LossSpec, w: float, batch: TripletBatch):
    (k1, p1), (k2, p2) = _curriculum_parts(spec, w)
    g1 = loss_gradient(k1, p1, batch)
    g2 = loss_gradient(k2, p2, batch)
    return tuple(w * x + (1.0 - w) * y for x, y in zip(g1, g2))


def loss_and_gradient(spec: LossSpec, batch: TripletBatch, w: float = 1.0):
    """Value and descriptor gradients for any kind; ``w`` is ignored for base kinds."""
    if spec.is_curriculum:
        return curriculum_forward(spec, w, batch), curriculum_gradient(spec, w, batch)
    kind, params = spec.kind, spec.params1
    return loss_forward(kind, params, batch), loss_gradient(kind, params, batch)
