"""Euler-type time integrators: plain, tamed and stopped-tamed Euler-Maruyama."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import SodeModel
from .rng import BrownianGrid, Partition, increment_on

Array = np.ndarray


class SchemeKind(str, enum.Enum):
    EULER_MARUYAMA = "euler_maruyama"
    TAMED_EM = "tamed_em"
    STOPPED_TAMED_EM = "stopped_tamed_em"

    @classmethod
    def parse(cls, name: "str | SchemeKind") -> "SchemeKind":
        if isinstance(name, cls):
            return name
        aliases = {"em": cls.EULER_MARUYAMA, "euler": cls.EULER_MARUYAMA,
                   "tamed": cls.TAMED_EM, "stopped_tamed": cls.STOPPED_TAMED_EM,
                   "stopped-tamed": cls.STOPPED_TAMED_EM}
        key = str(name).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key.replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}") from None


def taming_map(v: Array) -> Array:
    """``psi(v) = v / (1 + |v|^2)`` along the last axis."""
    v = np.asarray(v, dtype=float)
    return v / (1.0 + np.sum(v * v, axis=-1, keepdims=True))


def stop_threshold(mesh: float) -> float:
    """Radius ``exp(|ln mesh|^{1/2})`` beyond which the stopped scheme freezes."""
    if not mesh > 0:
        raise ValueError("mesh must be positive")
    return float(np.exp(np.sqrt(abs(np.log(mesh)))))


def _diffuse(sig: Array, dw: Array) -> Array:
    # explicit loop over noise columns keeps the summation order fixed
    out = sig[..., 0] * dw[..., None, 0]
    for j in range(1, sig.shape[-1]):
        out = out + sig[..., j] * dw[..., None, j]
    return out


def _raw_increment(model: SodeModel, z: Array, dt: float, dw: Array) -> Array:
    return model.mu(z) * dt + _diffuse(model.sigma(z), dw)


def step(kind, model: SodeModel, z: Array, dt: float, dw: Array, threshold: float = np.inf) -> Array:
    """One step of the selected scheme; batch dimensions broadcast."""
    kind = SchemeKind.parse(kind)
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    dw = np.asarray(dw, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        v = _raw_increment(model, z, dt, dw)
        if kind is SchemeKind.EULER_MARUYAMA:
            return z + v
        inc = taming_map(v)
        if kind is SchemeKind.STOPPED_TAMED_EM:
            active = np.linalg.norm(z, axis=-1, keepdims=True) < threshold
            inc = np.where(active, inc, 0.0)
        return z + inc


@dataclass
class Trajectory:
    """States on a partition, for one path ``(n+1, d)`` or a batch ``(P, n+1, d)``.

    ``stopped_at`` holds the first step index whose stopping indicator was 0,
    or -1 where the path never froze.
    """

    partition: Partition
    states: Array
    stopped_at: Array
    kind: SchemeKind

    @property
    def final(self) -> Array:
        return self.states[..., -1, :]

    def diverged(self, blowup: float = 1e10) -> Array:
        with np.errstate(invalid="ignore", over="ignore"):
            norms = np.linalg.norm(self.states, axis=-1)
        return np.any(~np.isfinite(norms) | (norms > blowup), axis=-1)


def integrate(kind, model: SodeModel, x0: Array, partition: Partition, brownian: BrownianGrid) -> Trajectory:
    """Fold ``step`` over the Brownian increments of ``partition``.

    The threshold is computed once from the partition mesh.
    """
    kind = SchemeKind.parse(kind)
    dws = increment_on(brownian, partition)
    if dws.shape[-1] != model.m:
        raise ValueError(f"Brownian grid has {dws.shape[-1]} dims but the model needs {model.m}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != model.d:
        raise ValueError(f"x0 must have {model.d} components")
    lead = dws.shape[:-2]
    n = partition.n
    steps = partition.steps
    threshold = stop_threshold(partition.mesh)
    states = np.empty(lead + (n + 1, model.d))
    states[..., 0, :] = np.broadcast_to(x0, lead + (model.d,))
    stopped = np.full(lead, -1, dtype=np.int64)
    z = states[..., 0, :].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            v = _raw_increment(model, z, steps[k], dws[..., k, :])
            if kind is SchemeKind.EULER_MARUYAMA:
                z = z + v
            else:
                inc = taming_map(v)
                if kind is SchemeKind.STOPPED_TAMED_EM:
                    active = np.linalg.norm(z, axis=-1) < threshold
                    stopped = np.where((stopped < 0) & ~active, k, stopped)
                    inc = np.where(active[..., None], inc, 0.0)
                z = z + inc
            states[..., k + 1, :] = z
    return Trajectory(partition, states, stopped, kind)


def reference_solution(model: SodeModel, x0: Array, brownian: BrownianGrid) -> Trajectory:
    """Exact solution where the model has one, else stopped-tamed on the full grid."""
    partition = brownian.partition()
    if model.exact_solution is not None:
        states = model.exact(x0, brownian)
        stopped = np.full(states.shape[:-2], -1, dtype=np.int64)
        return Trajectory(partition, states, stopped, SchemeKind.STOPPED_TAMED_EM)
    return integrate(SchemeKind.STOPPED_TAMED_EM, model, x0, partition, brownian)


# ---------------------------------------------------------------------------
# Taming-map derivative bounds
# ---------------------------------------------------------------------------


@dataclass
class TamingBoundsReport:
    d: int
    n_samples: int
    max_jacobian_norm: float
    max_identity_excess: float
    max_second_excess: float
    tol: float
    witness: Optional[Array] = None

    @property
    def ok(self) -> bool:
        return (
            self.max_jacobian_norm <= 3.0 + self.tol
            and self.max_identity_excess <= self.tol
            and self.max_second_excess <= self.tol
        )


def _sample_taming_points(rng: np.random.Generator, n: int, d: int) -> Array:
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    half = n // 2
    radius = np.concatenate([rng.uniform(0.0, 0.1, half), rng.uniform(0.1, 100.0, n - half)])
    return direction * radius[:, None]


def _fd_jacobian(v: Array) -> Array:
    n, d = v.shape
    h = 1e-6 * np.maximum(1.0, np.linalg.norm(v, axis=1))[:, None]
    jac = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        jac[:, :, j] = (taming_map(v + h * e) - taming_map(v - h * e)) / (2.0 * h)
    return jac


def _second_directional(v: Array, u: Array) -> Array:
    h = 1e-4 * np.maximum(1.0, np.linalg.norm(v, axis=1))[:, None]
    return (taming_map(v + h * u) - 2.0 * taming_map(v) + taming_map(v - h * u)) / (h * h)


def _probe_directions(rng: np.random.Generator, v: Array, n_angles: int = 33) -> list[Array]:
    """Unit directions covering the plane spanned by ``v`` and a random orthogonal vector.

    By rotational symmetry of ``psi`` the second derivative in direction ``u``
    depends only on the angle between ``u`` and ``v``.
    """
    n, d = v.shape
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    vhat = np.where(norm > 0, v / np.where(norm > 0, norm, 1.0), 0.0)
    vhat[norm[:, 0] == 0, 0] = 1.0
    if d == 1:
        return [vhat]
    w = rng.standard_normal((n, d))
    w -= np.sum(w * vhat, axis=1, keepdims=True) * vhat
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    angles = np.linspace(0.0, np.pi / 2, n_angles)
    return [np.cos(a) * vhat + np.sin(a) * w for a in angles]


def taming_jacobian_bounds_check(n_samples: int = 100_000, d: int = 3, seed: int = 0,
                                 tol: float = 1e-4, chunk: int = 20_000) -> TamingBoundsReport:
    """Check ``|psi'| <= 3``, ``|psi' - I| <= 3 (1 ^ |v|)^2`` and
    ``|psi''(v)(u,u)| <= 14 (1 ^ |v|)`` by finite differences on random points."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(d,)))
    worst = [-np.inf, -np.inf, -np.inf]
    witness = None
    for start in range(0, n_samples, chunk):
        v = _sample_taming_points(rng, min(chunk, n_samples - start), d)
        cap = np.minimum(1.0, np.linalg.norm(v, axis=1))
        jac = _fd_jacobian(v)
        jn = np.linalg.norm(jac, ord=2, axis=(1, 2))
        ie = np.linalg.norm(jac - np.eye(d), ord=2, axis=(1, 2)) - 3.0 * cap**2
        se = np.full(v.shape[0], -np.inf)
        for u in _probe_directions(rng, v):
            se = np.maximum(se, np.linalg.norm(_second_directional(v, u), axis=1) - 14.0 * cap)
        for slot, arr in enumerate((jn, ie, se)):
            i = int(np.argmax(arr))
            if arr[i] > worst[slot]:
                worst[slot] = float(arr[i])
                if slot and arr[i] > tol:
                    witness = v[i].copy()
        if jn.max() > 3.0 + tol:
            witness = v[int(np.argmax(jn))].copy()
    return TamingBoundsReport(d, n_samples, worst[0], worst[1], worst[2], tol, witness)
