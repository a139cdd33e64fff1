"""Spectral Galerkin truncations of 1-D stochastic Burgers and Cahn-Hilliard-Cook equations.

Fields are coefficient vectors in an orthonormal eigenbasis of the linear
operator: the Dirichlet sine basis ``sqrt(2) sin(n pi x)`` or the Neumann
cosine basis ``1, sqrt(2) cos(n pi x)``. Nonlinearities are evaluated
pseudo-spectrally with DST-I/DCT-I transforms on a uniform grid of ``K``
intervals; the trapezoid rule on that grid is exact for the polynomial
products involved as long as ``K >= 4 M``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft

from .analysis import (
    DEFAULT_CHUNK,
    BOOTSTRAP_RESAMPLES,
    DivergenceError,
    ErrorReport,
    fit_loglog,
    lr_norm,
    percentile_ci,
    rows_to_csv,
    run_chunks,
)
from .rng import SeedSpec, derive_stream
from .schemes import taming_map

Array = np.ndarray

SINE = "dirichlet_sine"
COSINE = "neumann_cosine"


@dataclass(frozen=True)
class SpectralBasis:
    kind: str

    def __post_init__(self):
        if self.kind not in (SINE, COSINE):
            raise ValueError(f"unknown basis kind {self.kind!r}")

    def eigenvalues(self, n: int) -> Array:
        """Eigenvalues of the linear operator for modes ``1..n``."""
        k = np.arange(1, n + 1, dtype=float)
        if self.kind == SINE:
            return -(np.pi**2) * k**2
        return -(np.pi**4) * (k - 1.0) ** 4

    def frequencies(self, n: int) -> Array:
        """Wave numbers: ``n`` for ``sin(n pi x)``, ``n - 1`` for the cosine basis."""
        k = np.arange(1, n + 1, dtype=float)
        return k if self.kind == SINE else k - 1.0

    def evaluate(self, x: Array, n: int) -> Array:
        """Closed-form ``e_1..e_n`` at points ``x``; shape ``x.shape + (n,)``."""
        x = np.asarray(x, dtype=float)[..., None]
        w = self.frequencies(n)
        if self.kind == SINE:
            return np.sqrt(2.0) * np.sin(np.pi * w * x)
        out = np.sqrt(2.0) * np.cos(np.pi * w * x)
        out[..., 0] = 1.0
        return out

    def grid(self, K: int) -> Array:
        return np.arange(K + 1) / K

    def synthesize(self, coeffs: Array, K: int) -> Array:
        """Field values at ``x_j = j/K``, ``j = 0..K``."""
        c = np.asarray(coeffs, dtype=float)
        n = c.shape[-1]
        if n > K - 1:
            raise ValueError("grid too coarse for the number of modes")
        lead = c.shape[:-1]
        if self.kind == SINE:
            a = np.zeros(lead + (K - 1,))
            a[..., :n] = c
            inner = (np.sqrt(2.0) / 2.0) * fft.dst(a, type=1, axis=-1)
            zero = np.zeros(lead + (1,))
            return np.concatenate([zero, inner, zero], axis=-1)
        a = np.zeros(lead + (K + 1,))
        a[..., 0] = c[..., 0]
        a[..., 1:n] = (np.sqrt(2.0) / 2.0) * c[..., 1:]
        return fft.dct(a, type=1, axis=-1)

    def analyze(self, values: Array, n: int) -> Array:
        """Trapezoid-rule coefficients ``<e_k, f>`` for ``k = 1..n`` from grid values."""
        f = np.asarray(values, dtype=float)
        K = f.shape[-1] - 1
        if self.kind == SINE:
            y = fft.dst(f[..., 1:-1], type=1, axis=-1)
            return (np.sqrt(2.0) / (2.0 * K)) * y[..., :n]
        y = fft.dct(f, type=1, axis=-1)[..., :n] / (2.0 * K)
        y[..., 1:] *= np.sqrt(2.0)
        return y


def cosine_integrals(values: Array, n: int) -> Array:
    """Trapezoid ``int_0^1 f(x) cos(k pi x) dx`` for ``k = 0..n-1``."""
    f = np.asarray(values, dtype=float)
    K = f.shape[-1] - 1
    return fft.dct(f, type=1, axis=-1)[..., :n] / (2.0 * K)


@dataclass
class SpectralField:
    coeffs: Array
    basis: SpectralBasis

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("spectral coefficients must be finite")

    @property
    def modes(self) -> int:
        return self.coeffs.shape[-1]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs**2, axis=-1)))

    def hr_norm(self, r: float, rho: float = 0.0) -> Array:
        """``(sum |rho - lambda_n|^{2r} c_n^2)^{1/2}``."""
        lam = self.basis.eigenvalues(self.modes)
        w = np.abs(rho - lam) ** (2.0 * r)
        return np.sqrt(np.sum(w * self.coeffs**2, axis=-1))

    def values(self, K: int) -> Array:
        return self.basis.synthesize(self.coeffs, K)

    def snapshot_csv(self, points: int = 512) -> str:
        """``(x, v(x))`` on ``points`` uniformly spaced nodes including both ends."""
        x = np.linspace(0.0, 1.0, points)
        v = self.basis.evaluate(x, self.modes) @ self.coeffs
        return rows_to_csv(["x", "v"], list(zip(x, v)))


def project(v: SpectralField, N: int) -> SpectralField:
    if N <= 0:
        raise ValueError("N must be positive")
    if N > v.modes:
        raise ValueError("cannot project onto more modes than the field carries")
    return SpectralField(v.coeffs[..., :N].copy(), v.basis)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def default_noise_weights(n: int, exponent: float = 3.0) -> Array:
    return np.arange(1, n + 1, dtype=float) ** (-exponent)


@dataclass(frozen=True)
class SpdeModel:
    """Semilinear SPDE ``dX = (A X + F(X)) dt + B(X) dW`` in a spectral basis.

    ``nonlinearity`` is ``"burgers"`` (``F(v) = c/2 (v^2)'``), ``"chc"``
    (``F(v) = c Lap(v^3 - v)``) or ``"none"``. ``multiplier`` is ``b(x, v)``
    for the noise ``B(v)u = b(x, v(x)) (sqrt(Q) u)(x)``; ``None`` means
    additive noise ``sqrt(Q)``.
    """

    name: str
    basis: SpectralBasis
    nonlinearity: str = "none"
    c: float = 1.0
    q_exponent: float = 3.0
    q_first: Optional[float] = None
    multiplier: Optional[Callable[[Array, Array], Array]] = None
    params: dict = field(default_factory=dict)

    def noise_weights(self, n: int) -> Array:
        q = default_noise_weights(n, self.q_exponent)
        if self.q_first is not None:
            q[0] = self.q_first
        return q


def stochastic_burgers(c: float = 1.0, q_exponent: float = 3.0, amplitude: float = 0.5) -> SpdeModel:
    """Burgers equation on (0, 1) with Dirichlet conditions and noise multiplier ``1 + amplitude sin(v)``."""
    if q_exponent <= 1:
        raise ValueError("q_exponent must exceed 1 for trace-class noise")

    def b(x, v):
        return 1.0 + amplitude * np.sin(v)

    return SpdeModel("burgers", SpectralBasis(SINE), "burgers", c, q_exponent, None, b,
                     dict(c=c, q_exponent=q_exponent, amplitude=amplitude))


def cahn_hilliard_cook(c: float = 1.0, q_exponent: float = 3.0, q_mass: float = 0.0) -> SpdeModel:
    """Cahn-Hilliard-Cook type equation with Neumann conditions and additive noise.

    ``q_mass`` is the noise variance of the constant mode; with 0 the mass is conserved.
    """
    if q_exponent <= 1:
        raise ValueError("q_exponent must exceed 1 for trace-class noise")
    return SpdeModel("chc", SpectralBasis(COSINE), "chc", c, q_exponent, q_mass, None,
                     dict(c=c, q_exponent=q_exponent, q_mass=q_mass))


def linear_heat(q_exponent: float = 3.0) -> SpdeModel:
    """Stochastic heat equation with additive noise; Gaussian closed forms are available."""
    return SpdeModel("heat-linear", SpectralBasis(SINE), "none", 0.0, q_exponent, None, None,
                     dict(q_exponent=q_exponent))


SPDE_REGISTRY = {
    "burgers": (stochastic_burgers, dict(c=1.0, q_exponent=3.0, amplitude=0.5), "3.2.3",
                "stochastic Burgers equation, Dirichlet sine basis"),
    "chc": (cahn_hilliard_cook, dict(c=1.0, q_exponent=3.0, q_mass=0.0), "3.2.2",
            "Cahn-Hilliard-Cook type equation, Neumann cosine basis"),
    "heat-linear": (linear_heat, dict(q_exponent=3.0), "oracle",
                    "linear stochastic heat equation (Gaussian closed form)"),
}


def make_spde(model_id: str, **overrides) -> SpdeModel:
    try:
        factory, defaults, _, _ = SPDE_REGISTRY[model_id]
    except KeyError:
        raise KeyError(f"unknown SPDE model id {model_id!r}; known: {sorted(SPDE_REGISTRY)}") from None
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"unknown parameters for {model_id!r}: {sorted(unknown)}")
    return factory(**{**defaults, **overrides})


# ---------------------------------------------------------------------------
# Nonlinearity and time stepping
# ---------------------------------------------------------------------------


def _check_grid(M: int, K: int) -> None:
    if K < 4 * M:
        raise ValueError(f"grid of {K} intervals is too coarse for {M} modes (need >= {4 * M})")


def _nonlinearity_from_values(model: SpdeModel, v: Array, M: int) -> Array:
    basis = model.basis
    if model.nonlinearity == "burgers":
        # <e_n, c/2 (v^2)'> = -(c/2) sqrt(2) n pi int v^2 cos(n pi x) dx
        n = np.arange(1, M + 1, dtype=float)
        cos_int = cosine_integrals(v * v, M + 1)[..., 1:]
        return -(model.c / 2.0) * np.sqrt(2.0) * np.pi * n * cos_int
    if model.nonlinearity == "chc":
        w = basis.analyze(v**3 - v, M)
        k = basis.frequencies(M)
        return -model.c * (np.pi * k) ** 2 * w
    raise ValueError(f"unknown nonlinearity {model.nonlinearity!r}")


def nonlinearity_coeffs(model: SpdeModel, coeffs: Array, grid_size: Optional[int] = None) -> Array:
    """Coefficients of ``P_M F(v)`` for ``v`` with ``M`` coefficients (batched)."""
    coeffs = np.asarray(coeffs, dtype=float)
    M = coeffs.shape[-1]
    K = 4 * M if grid_size is None else int(grid_size)
    _check_grid(M, K)
    if model.nonlinearity == "none":
        return np.zeros_like(coeffs)
    return _nonlinearity_from_values(model, model.basis.synthesize(coeffs, K), M)


def apply_nonlinearity(model: SpdeModel, v: SpectralField, M_modes: Optional[int] = None,
                       grid_size: Optional[int] = None) -> SpectralField:
    M = v.modes if M_modes is None else M_modes
    c = np.zeros(v.coeffs.shape[:-1] + (M,))
    k = min(M, v.modes)
    c[..., :k] = v.coeffs[..., :k]
    return SpectralField(nonlinearity_coeffs(model, c, grid_size), v.basis)


def _noise_from_values(model: SpdeModel, v: Array, noise_field: Array, N: int) -> Array:
    x = model.basis.grid(v.shape[-1] - 1)
    return model.basis.analyze(model.multiplier(x, v) * noise_field, N)


def _additive_noise(xi: Array, N: int) -> Array:
    out = np.zeros(xi.shape[:-1] + (N,))
    k = min(N, xi.shape[-1])
    out[..., :k] = xi[..., :k]
    return out


def noise_coeffs(model: SpdeModel, coeffs: Array, xi: Array, grid_size: Optional[int] = None) -> Array:
    """Coefficients of ``P_N B(v) xi`` where ``xi`` holds per-mode increments ``sqrt(q_n) dW_n``.

    ``N`` is the number of state coefficients; ``xi`` may carry more modes.
    """
    N = coeffs.shape[-1]
    if model.multiplier is None:
        return _additive_noise(xi, N)
    M = max(N, xi.shape[-1])
    K = 4 * M if grid_size is None else int(grid_size)
    _check_grid(M, K)
    v = model.basis.synthesize(coeffs, K)
    return _noise_from_values(model, v, model.basis.synthesize(xi, K), N)


def galerkin_step(model: SpdeModel, coeffs: Array, dt: float, xi: Array,
                  grid_size: Optional[int] = None, noise_field: Optional[Array] = None) -> Array:
    """Exponential-integrator step ``c <- e^{lambda dt} (c + psi(dt F(c)) + P_N B(c) xi)``.

    ``noise_field`` optionally supplies ``xi`` synthesized on the grid, so
    several truncations driven by the same increments can share it.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    coeffs = np.asarray(coeffs, dtype=float)
    xi = np.asarray(xi, dtype=float)
    N = coeffs.shape[-1]
    M = max(N, xi.shape[-1])
    K = 4 * M if grid_size is None else int(grid_size)
    _check_grid(M, K)
    decay = np.exp(model.basis.eigenvalues(N) * dt)
    needs_values = model.nonlinearity != "none" or model.multiplier is not None
    v = model.basis.synthesize(coeffs, K) if needs_values else None
    if model.nonlinearity == "none":
        drift = np.zeros_like(coeffs)
    else:
        drift = taming_map(dt * _nonlinearity_from_values(model, v, N))
    if model.multiplier is None:
        noise = _additive_noise(xi, N)
    else:
        if noise_field is None:
            noise_field = model.basis.synthesize(xi, K)
        noise = _noise_from_values(model, v, noise_field, N)
    return decay * (coeffs + drift + noise)


def initial_coeffs(kind: str, n: int, basis: Optional[SpectralBasis] = None) -> Array:
    """``zero``, ``decay`` (``c_k = k^-2``) or ``smooth`` (the first non-constant eigenfunction)."""
    if kind == "zero":
        return np.zeros(n)
    if kind == "smooth":
        c = np.zeros(n)
        c[1 if basis is not None and basis.kind == COSINE else 0] = 1.0
        return c
    if kind == "decay":
        return np.arange(1, n + 1, dtype=float) ** -2.0
    raise ValueError(f"unknown initial condition {kind!r}")


# ---------------------------------------------------------------------------
# Truncation-error experiment
# ---------------------------------------------------------------------------


def galerkin_error_experiment(model: SpdeModel, N_list: Sequence[int], M_ref: int = 128, T: float = 1.0,
                              dt: Optional[float] = None, paths: int = 200, r: float = 2.0, seed: int = 0,
                              init: str = "smooth", record_every: int = 32, chunk: int = 50,
                              threads: int = 1, resamples: int = BOOTSTRAP_RESAMPLES) -> ErrorReport:
    """Estimate ``sup_t |X^{M_ref}_t - X^N_t|_{L^r}`` over recorded times for each ``N``.

    All truncations are driven by the same per-mode increments. The
    report's ``extra["tail"]`` holds ``sup_t |(I - P_N) X^{M_ref}_t|_{L^r}``.
    """
    N_list = [int(n) for n in N_list]
    if any(n <= 0 or n > M_ref for n in N_list) or sorted(N_list) != N_list or len(set(N_list)) != len(N_list):
        raise ValueError("N_list must be strictly increasing with 0 < N <= M_ref")
    if paths < 2:
        raise ValueError("paths must be at least 2")
    steps = 2**12 if dt is None else int(round(T / dt))
    dt = T / steps
    if steps % record_every:
        raise ValueError("record_every must divide the number of steps")
    q = model.noise_weights(M_ref)
    sq = np.sqrt(q * dt)
    c0 = initial_coeffs(init, M_ref, model.basis)
    K = 4 * M_ref
    block = 256

    def work(idx: range):
        P = len(idx)
        gens = [derive_stream(SeedSpec(seed, i, "spde-noise")) for i in idx]
        ref = np.broadcast_to(c0, (P, M_ref)).copy()
        runs = [np.broadcast_to(c0[:n], (P, n)).copy() for n in N_list]
        n_rec = steps // record_every + 1
        err = np.empty((P, n_rec, len(N_list)))
        tail = np.empty((P, n_rec, len(N_list)))

        def record(slot):
            for j, (n, c) in enumerate(zip(N_list, runs)):
                t2 = np.sum(ref[:, n:] ** 2, axis=-1)
                err[:, slot, j] = np.sqrt(np.sum((ref[:, :n] - c) ** 2, axis=-1) + t2)
                tail[:, slot, j] = np.sqrt(t2)

        record(0)
        for start in range(0, steps, block):
            nb = min(block, steps - start)
            dW = np.stack([g.standard_normal((nb, M_ref)) for g in gens])
            for k in range(nb):
                xi = dW[:, k, :] * sq
                field = None if model.multiplier is None else model.basis.synthesize(xi, K)
                ref_next = galerkin_step(model, ref, dt, xi, K, field)
                for j, n in enumerate(N_list):
                    runs[j] = ref_next if n == M_ref else galerkin_step(model, runs[j], dt, xi, K, field)
                ref = ref_next
                step_no = start + k + 1
                if step_no % record_every == 0:
                    if not np.all(np.isfinite(ref)):
                        raise DivergenceError("reference Galerkin solution became non-finite")
                    record(step_no // record_every)
        return err, tail

    parts = run_chunks(work, paths, chunk, threads)
    err = np.concatenate([p[0] for p in parts], axis=0)
    tail = np.concatenate([p[1] for p in parts], axis=0)
    return _sup_time_report(N_list, err, tail, r, seed, resamples,
                            dict(M_ref=M_ref, dt=dt, steps=steps, record_every=record_every, init=init))


def _sup_time_report(N_list, err: Array, tail: Array, r: float, seed: int, resamples: int, extra: dict) -> ErrorReport:
    """``sup_t`` of the ``L^r`` norm, with the sup taken outside the expectation."""
    P = err.shape[0]
    errors = np.max(lr_norm(err, r), axis=0)
    tails = np.max(lr_norm(tail, r), axis=0)
    rng = derive_stream(SeedSpec(seed, 0, "bootstrap-galerkin"))
    idx = rng.integers(0, P, size=(resamples, P))
    powered = err**r
    reps = np.empty((resamples, len(N_list)))
    for b in range(resamples):
        reps[b] = np.max(np.mean(powered[idx[b]], axis=0), axis=0) ** (1.0 / r)
    lo, hi = percentile_ci(reps)
    mask = errors > 0
    Ns = np.asarray(N_list, dtype=float)
    if mask.sum() >= 2:
        slope, icpt = fit_loglog(Ns[mask], errors[mask])
        boots = np.array([fit_loglog(Ns[mask], rep[mask])[0] for rep in reps])
        rate, const = -slope, float(np.exp(icpt))
        rate_ci = (float(np.quantile(-boots, 0.025)), float(np.quantile(-boots, 0.975)))
    else:
        rate, const, rate_ci = float("nan"), float("nan"), (float("nan"), float("nan"))
    report = ErrorReport(list(N_list), errors, lo, hi, rate, rate_ci, r, P, seed,
                         fitted_constant=const, fit_mask=mask)
    report.extra.update(extra)
    report.extra["tail"] = tails
    return report


def linear_closed_form_error(N_list: Sequence[int], M_ref: int, T: float = 1.0, steps: int = 2**12,
                             q_exponent: float = 3.0) -> Array:
    """``(E |X^M_T - X^N_T|^2)^{1/2}`` for the linear heat scheme started at 0.

    Each mode is an independent Gaussian AR(1) recursion
    ``c <- e^{lambda dt} (c + sqrt(q dt) Z)``; the variance grows in time so
    the sup over time is attained at ``T``.
    """
    dt = T / steps
    lam = SpectralBasis(SINE).eigenvalues(M_ref)
    q = default_noise_weights(M_ref, q_exponent)
    g = np.exp(2.0 * lam * dt)
    var = q * dt * g * (-np.expm1(2.0 * lam * dt * steps)) / (-np.expm1(2.0 * lam * dt))
    return np.array([math.sqrt(math.fsum(var[n:])) for n in N_list])
