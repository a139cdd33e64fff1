"""Monte Carlo strong errors, rate fits, exponential moments and perturbation checks."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import SodeModel
from .rng import (
    BrownianGrid,
    Partition,
    SeedSpec,
    coarsen_to,
    derive_stream,
    sample_brownian_batch,
)
from .schemes import SchemeKind, Trajectory, integrate, reference_solution

Array = np.ndarray

DEFAULT_CHUNK = 200
BOOTSTRAP_RESAMPLES = 1000


class DivergenceError(RuntimeError):
    """A reference or oracle trajectory became non-finite."""


# ---------------------------------------------------------------------------
# Reductions and fits
# ---------------------------------------------------------------------------


def run_chunks(fn: Callable[[range], object], paths: int, chunk: int = DEFAULT_CHUNK,
               threads: int = 1) -> list:
    """Apply ``fn`` to consecutive path-index ranges and return results in path order.

    Chunk boundaries depend only on ``paths`` and ``chunk``, never on ``threads``.
    """
    ranges = [range(s, min(s + chunk, paths)) for s in range(0, paths, chunk)]
    if threads <= 1 or len(ranges) == 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ranges))


def lr_norm(samples: Array, r: float, axis: int = 0) -> Array:
    """``(E |X|^r)^{1/r}`` with an exactly rounded sum, so the order of paths is irrelevant."""
    s = np.moveaxis(np.asarray(samples, dtype=float), axis, 0)
    if np.isinf(r):
        return np.max(np.abs(s), axis=0)
    powered = np.abs(s) ** r
    flat = powered.reshape(powered.shape[0], -1)
    means = np.array([math.fsum(flat[:, j]) / flat.shape[0] for j in range(flat.shape[1])])
    return (means ** (1.0 / r)).reshape(powered.shape[1:])


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2 or not np.all(np.isfinite(ly)):
        return float("nan"), float("nan")
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(slope), float(icpt)


def bootstrap_lr(samples: Array, r: float, seed: int, tag: str = "bootstrap",
                 resamples: int = BOOTSTRAP_RESAMPLES) -> Array:
    """Bootstrap replicates of ``lr_norm`` along axis 0; returns shape ``(resamples, ...)``."""
    s = np.asarray(samples, dtype=float)
    n = s.shape[0]
    rng = derive_stream(SeedSpec(seed, 0, tag))
    idx = rng.integers(0, n, size=(resamples, n))
    if np.isinf(r):
        return np.max(np.abs(s)[idx], axis=1)
    powered = np.abs(s) ** r
    out = np.empty((resamples,) + s.shape[1:])
    for b in range(resamples):
        out[b] = np.mean(powered[idx[b]], axis=0)
    return out ** (1.0 / r)


def percentile_ci(replicates: Array, level: float = 0.95) -> tuple[Array, Array]:
    lo = (1.0 - level) / 2.0
    return np.quantile(replicates, lo, axis=0), np.quantile(replicates, 1.0 - lo, axis=0)


def _fmt(x: float) -> str:
    return repr(float(x))


def rows_to_csv(header: Sequence[str], rows: Sequence[Sequence[float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([str(v) if isinstance(v, (int, np.integer, str)) else _fmt(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Strong error
# ---------------------------------------------------------------------------


@dataclass
class ErrorReport:
    resolutions: list
    errors: Array
    ci_low: Array
    ci_high: Array
    fitted_rate: float
    fitted_rate_ci: tuple
    r: float
    paths: int
    master_seed: int
    fitted_constant: float = float("nan")
    reference_gap: float = 0.0
    fit_mask: Optional[Array] = None
    checksum: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def rate_defined(self) -> bool:
        return bool(np.isfinite(self.fitted_rate))

    @property
    def gate_ok(self) -> bool:
        """Reference self-consistency: the reference gap is below half the coarsest error."""
        return bool(self.reference_gap < 0.5 * self.errors[0])

    def rows(self):
        return [(int(n), e, lo, hi) for n, e, lo, hi in
                zip(self.resolutions, self.errors, self.ci_low, self.ci_high)]

    def to_csv(self, first_column: str = "N") -> str:
        return rows_to_csv([first_column, "error", "ci_low", "ci_high"], self.rows())


def _rate_from(resolutions, errors, mask) -> tuple[float, float]:
    n = np.asarray(resolutions, dtype=float)[mask]
    e = np.asarray(errors, dtype=float)[mask]
    if n.size < 2 or np.any(e <= 0):
        return float("nan"), float("nan")
    slope, icpt = fit_loglog(n, e)
    return -slope, float(np.exp(icpt))


def build_report(resolutions, sups: Array, r: float, seed: int, gap: float = 0.0,
                 checksum: str = "", resamples: int = BOOTSTRAP_RESAMPLES) -> ErrorReport:
    """Aggregate a ``(paths, levels)`` matrix of per-path sup errors into an ErrorReport."""
    sups = np.asarray(sups, dtype=float)
    errors = lr_norm(sups, r)
    reps = bootstrap_lr(sups, r, seed, resamples=resamples)
    lo, hi = percentile_ci(reps)
    mask = errors > 3.0 * gap
    rate, const = _rate_from(resolutions, errors, mask)
    if np.isfinite(rate):
        boot_rates = np.array([_rate_from(resolutions, rep, mask)[0] for rep in reps])
        boot_rates = boot_rates[np.isfinite(boot_rates)]
        rate_ci = tuple(float(v) for v in np.quantile(boot_rates, [0.025, 0.975]))
    else:
        rate_ci = (float("nan"), float("nan"))
    return ErrorReport(list(resolutions), errors, lo, hi, rate, rate_ci, r, sups.shape[0], seed,
                       fitted_constant=const, reference_gap=gap, fit_mask=mask, checksum=checksum)


def _sup_error(a: Array, b: Array) -> Array:
    with np.errstate(invalid="ignore", over="ignore"):
        d = np.linalg.norm(a - b, axis=-1)
    return np.max(d, axis=-1)


def strong_error(model: SodeModel, kind, x0, levels: Sequence[int], r: float = 2.0,
                 paths: int = 1000, seed: int = 0, T: float = 1.0, ref_offset: int = 3,
                 gate: bool = True, chunk: int = DEFAULT_CHUNK, threads: int = 1,
                 resamples: int = BOOTSTRAP_RESAMPLES) -> ErrorReport:
    """Estimate ``sup_n |X_{t_n} - Z_n|_{L^r}`` per level and fit the convergence rate.

    Every path draws one Brownian grid at the finest level needed; all coarser
    grids and the reference are pairwise coarsenings of it. Models with an
    exact solution use it as reference and skip the self-consistency gate.
    """
    kind = SchemeKind.parse(kind)
    levels = sorted(int(l) for l in levels)
    if len(set(levels)) != len(levels) or levels[0] < 0:
        raise ValueError("levels must be distinct non-negative integers")
    if paths < 2:
        raise ValueError("paths must be at least 2")
    exact = model.exact_solution is not None
    ref_level = levels[-1] if exact else levels[-1] + ref_offset
    use_gate = gate and not exact
    top = ref_level + (1 if use_gate else 0)
    x0 = np.asarray(x0, dtype=float)

    def work(idx: range):
        fine = sample_brownian_batch(seed, idx, model.m, top, T)
        ref_grid = coarsen_to(fine, ref_level)
        ref = reference_solution(model, x0, ref_grid)
        if not np.all(np.isfinite(ref.states)):
            raise DivergenceError(f"reference trajectory for {model.name!r} became non-finite")
        cols = []
        for level in levels:
            g = coarsen_to(fine, level)
            tr = integrate(kind, model, x0, g.partition(), g)
            stride = 2 ** (ref_level - level)
            cols.append(_sup_error(tr.states, ref.states[..., ::stride, :]))
        gap = None
        if use_gate:
            finer = reference_solution(model, x0, fine)
            gap = _sup_error(finer.states[..., ::2, :], ref.states)
        return np.stack(cols, axis=-1), gap, fine.checksum()

    parts = run_chunks(work, paths, chunk, threads)
    sups = np.concatenate([p[0] for p in parts], axis=0)
    gap = float(lr_norm(np.concatenate([p[1] for p in parts]), r)) if use_gate else 0.0
    digest = hashlib.blake2b("".join(p[2] for p in parts).encode(), digest_size=16).hexdigest()
    report = build_report([2**l for l in levels], sups, r, seed, gap, digest, resamples)
    report.extra.update(reference_level=ref_level, scheme=kind.value, levels=levels)
    return report


def divergence_fraction(model: SodeModel, kind, x0, level: int, paths: int = 1000,
                        blowup: float = 1e10, seed: int = 0, T: float = 1.0,
                        chunk: int = DEFAULT_CHUNK, threads: int = 1) -> float:
    """Fraction of paths that leave the ball of radius ``blowup`` or go non-finite."""
    if not blowup > 0:
        raise ValueError("blowup threshold must be positive")
    x0 = np.asarray(x0, dtype=float)

    def work(idx):
        g = sample_brownian_batch(seed, idx, model.m, level, T)
        return integrate(kind, model, x0, g.partition(), g).diverged(blowup)

    flags = np.concatenate(run_chunks(work, paths, chunk, threads))
    return int(flags.sum()) / flags.size


# ---------------------------------------------------------------------------
# Exponential moments
# ---------------------------------------------------------------------------


@dataclass
class ExpMomentReport:
    mean: float
    ci_low: float
    ci_high: float
    max_exponent: float
    overflow: bool


EXP_OVERFLOW = 700.0


def _trapezoid(values: Array, dt: float, axis: int = -1) -> Array:
    v = np.moveaxis(values, axis, -1)
    return dt * (np.sum(v, axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))


def exp_moment_estimate(model: SodeModel, kind, x0, level: int, paths: int = 1000, t: float = 1.0,
                        seed: int = 0, include_integral: bool = False,
                        chunk: int = DEFAULT_CHUNK, threads: int = 1) -> ExpMomentReport:
    """Monte Carlo ``E exp(U0(Z_t) / e^{alpha t} [+ int_0^t (U1 - c)(Z_s) e^{-alpha s} ds])``."""
    if model.constants is None:
        raise ValueError("model needs Lyapunov constants")
    alpha = model.constants.alpha
    c = model.constants.c
    x0 = np.asarray(x0, dtype=float)

    def work(idx):
        g = sample_brownian_batch(seed, idx, model.m, level, t)
        tr = integrate(kind, model, x0, g.partition(), g)
        expo = model.u0(tr.final) / np.exp(alpha * t)
        if include_integral:
            s = g.partition().times
            integrand = (model.u1(tr.states) - c) * np.exp(-alpha * s)
            expo = expo + _trapezoid(integrand, g.dt)
        return expo

    expo = np.concatenate(run_chunks(work, paths, chunk, threads))
    top = float(np.max(expo))
    if top > EXP_OVERFLOW or not np.isfinite(top):
        return ExpMomentReport(float("inf"), float("inf"), float("inf"), top, True)
    vals = np.exp(expo)
    mean = math.fsum(vals) / vals.size
    reps = bootstrap_lr(vals, 1.0, seed, tag="bootstrap-exp")
    lo, hi = percentile_ci(reps)
    return ExpMomentReport(mean, float(lo), float(hi), top, False)


# ---------------------------------------------------------------------------
# Coupled exact / Euler pairs for the perturbation identities
# ---------------------------------------------------------------------------


@dataclass
class CoupledPair:
    """Reference ``X`` and a piecewise-frozen Euler process ``Y`` on a common fine grid.

    ``Y`` follows ``dY = a dt + b dW`` with ``a_t = mu(Y_{t_k})`` and
    ``b_t = sigma(Y_{t_k})`` on each coarse step ``[t_k, t_{k+1})``.
    """

    X: Array
    Y: Array
    a: Array
    b: Array
    dW: Array
    dt: float
    T: float

    @property
    def times(self) -> Array:
        return np.arange(self.X.shape[-2]) * self.dt


def coupled_euler_pair(model: SodeModel, x0, y0, fine_level: int, coarse_level: int,
                       paths: range, seed: int, T: float = 1.0,
                       reference: Optional[Callable[[BrownianGrid], Array]] = None) -> CoupledPair:
    """Simulate the pair for the given path indices.

    ``reference`` maps the fine grid to ``X``; the default is the model's
    exact solution or the stopped-tamed scheme on the fine grid.
    """
    if coarse_level > fine_level:
        raise ValueError("coarse level must not exceed the fine level")
    grid = sample_brownian_batch(seed, paths, model.m, fine_level, T)
    if reference is None:
        X = reference_solution(model, np.asarray(x0, dtype=float), grid).states
    else:
        X = reference(grid)
    if not np.all(np.isfinite(X)):
        raise DivergenceError("reference trajectory became non-finite")
    dW = grid.increments
    h = grid.dt
    stride = 2 ** (fine_level - coarse_level)
    lead = dW.shape[:-2]
    n = dW.shape[-2]
    Y = np.empty(lead + (n + 1, model.d))
    a = np.empty(lead + (n, model.d))
    b = np.empty(lead + (n, model.d, model.m))
    Y[..., 0, :] = np.broadcast_to(np.asarray(y0, dtype=float), lead + (model.d,))
    with np.errstate(over="ignore", invalid="ignore"):
        for k0 in range(0, n, stride):
            yk = Y[..., k0, :]
            mu = model.mu(yk)
            sig = model.sigma(yk)
            w = np.zeros(lead + (model.m,))
            for j in range(stride):
                w = w + dW[..., k0 + j, :]
                a[..., k0 + j, :] = mu
                b[..., k0 + j, :, :] = sig
                Y[..., k0 + j + 1, :] = yk + mu * ((j + 1) * h) + np.einsum("...ij,...j->...i", sig, w)
    return CoupledPair(X, Y, a, b, dW, h, T)


def coupled_euler_ensemble(model: SodeModel, x0, y0, fine_level: int, coarse_level: int, paths: int,
                           seed: int, T: float = 1.0, chunk: int = DEFAULT_CHUNK, threads: int = 1) -> CoupledPair:
    """``coupled_euler_pair`` over path indices ``0..paths-1``, simulated in fixed chunks."""
    parts = run_chunks(lambda idx: coupled_euler_pair(model, x0, y0, fine_level, coarse_level, idx, seed, T),
                       paths, chunk, threads)
    stacked = (np.concatenate([getattr(p, f) for p in parts]) for f in ("X", "Y", "a", "b", "dW"))
    return CoupledPair(*stacked, parts[0].dt, parts[0].T)


# ---------------------------------------------------------------------------
# Perturbation estimate certification
# ---------------------------------------------------------------------------


@dataclass
class BoundCertificate:
    lhs: float
    rhs: float
    margin: float
    lhs_ci: tuple
    components: dict
    vacuous: bool = False

    @property
    def lhs_ci_width(self) -> float:
        return float(self.lhs_ci[1] - self.lhs_ci[0])

    @property
    def holds(self) -> bool:
        return self.vacuous or self.margin >= -self.lhs_ci_width


def _exponent_ratio(model: SodeModel, X: Array, Y: Array, p: float, eps: float) -> Array:
    dx = X - Y
    num = np.sum(dx * (model.mu(X) - model.mu(Y)), axis=-1)
    ds = model.sigma(X) - model.sigma(Y)
    spread = 0.5 * (p - 1.0) * (1.0 + eps)
    if spread:
        num = num + spread * np.sum(ds * ds, axis=(-2, -1))
    den = np.sum(dx * dx, axis=-1)
    # 0/0 := 0
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def perturbation_bound_certify(model: SodeModel, pair: CoupledPair, p: float = 2.0, eps: float = 1.0,
                               alpha_scale: float = 1.0, beta_scale: float = 1.0,
                               q: Optional[float] = None, seed: int = 0) -> BoundCertificate:
    """Evaluate both sides of the L^r perturbation estimate at ``tau = T``.

    ``q`` defaults to ``p`` so that ``r = p / 2``. Time integrals use the
    trapezoid rule on the fine grid; expectations are sample means.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    if not (alpha_scale > 0 and beta_scale > 0):
        raise ValueError("alpha_scale and beta_scale must be positive")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    q = p if q is None else q
    r = 1.0 / (1.0 / p + 1.0 / q)
    X, Y, h = pair.X, pair.Y, pair.dt

    lhs_samples = np.linalg.norm(X[..., -1, :] - Y[..., -1, :], axis=-1)
    lhs = float(lr_norm(lhs_samples, r))
    lo, hi = percentile_ci(bootstrap_lr(lhs_samples, r, seed, tag="bootstrap-lhs"))

    shift = (1.0 - 1.0 / p) / alpha_scale + (0.5 - 1.0 / p) / beta_scale
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = _exponent_ratio(model, X, Y, p, eps)
        expo = _trapezoid(np.maximum(ratio + shift, 0.0), h)
    top = float(np.max(expo))
    vacuous = not np.isfinite(top) or top * (q if np.isfinite(q) else 1.0) > EXP_OVERFLOW
    if vacuous:
        exp_factor = float("inf")
    elif np.isinf(q):
        exp_factor = float(np.exp(top))
    else:
        exp_factor = float(lr_norm(np.exp(expo), q))

    initial = float(lr_norm(np.linalg.norm(X[..., 0, :] - Y[..., 0, :], axis=-1), p))
    # Y between fine nodes is needed only at nodes; a, b are left-point values
    Yl = Y[..., :-1, :]
    drift_res = np.linalg.norm(pair.a - model.mu(Yl), axis=-1)
    diff_res = np.sqrt(np.sum((pair.b - model.sigma(Yl)) ** 2, axis=(-2, -1)))
    drift_norm = float(lr_norm(np.sum(drift_res**p, axis=-1) * h, 1.0)) ** (1.0 / p)
    diff_norm = float(lr_norm(np.sum(diff_res**p, axis=-1) * h, 1.0)) ** (1.0 / p)
    drift_term = alpha_scale ** (1.0 - 1.0 / p) * drift_norm
    if eps == 0:
        diff_coef = 0.0 if diff_norm == 0 else float("inf")
    else:
        diff_coef = beta_scale ** (0.5 - 1.0 / p) * math.sqrt((p - 1.0) * (1.0 + 1.0 / eps))
    diff_term = diff_coef * diff_norm if diff_norm else 0.0
    bracket = initial + drift_term + diff_term
    rhs = float("inf") if vacuous else exp_factor * bracket
    components = dict(exp_factor=exp_factor, initial_gap=initial, drift_residual=drift_term,
                      diffusion_residual=diff_term, r=r, q=q, p=p)
    return BoundCertificate(lhs, rhs, rhs - lhs, (float(lo), float(hi)), components, vacuous)


# ---------------------------------------------------------------------------
# Pathwise Ito-formula residual
# ---------------------------------------------------------------------------


def perturbation_formula_terms(model: SodeModel, pair: CoupledPair, chi: float = 0.0, level: Optional[int] = None):
    """Left and right sides of the perturbation formula for ``V(x, y) = |x - y|^2``.

    Sums use left-point rules on the sub-grid at ``level`` (default: the full
    fine grid). Returns ``(times, lhs, rhs)`` with shape ``(..., n+1)``.
    """
    X, Y, a, b, dW, h = pair.X, pair.Y, pair.a, pair.b, pair.dW, pair.dt
    n_fine = dW.shape[-2]
    stride = 1 if level is None else n_fine // 2**level
    if stride < 1 or stride * (n_fine // stride) != n_fine:
        raise ValueError("quadrature level must not exceed the fine level")
    Xs = X[..., ::stride, :]
    Ys = Y[..., ::stride, :]
    dt = h * stride
    n = Xs.shape[-2] - 1
    # sum fine increments pairwise into quadrature steps
    dWs = dW
    s = stride
    while s > 1:
        dWs = dWs[..., 0::2, :] + dWs[..., 1::2, :]
        s //= 2
    al = a[..., ::stride, :]
    bl = b[..., ::stride, :, :]
    Xl, Yl = Xs[..., :-1, :], Ys[..., :-1, :]
    diff = Xl - Yl
    sx, sy = model.sigma(Xl), model.sigma(Yl)
    mx, my = model.mu(Xl), model.mu(Yl)
    V = np.sum(diff * diff, axis=-1)

    times = np.arange(n + 1) * dt
    discount = np.exp(chi * times)
    ito = 2.0 * np.einsum("...i,...ij,...j->...", diff, sx - bl, dWs)
    gen = 2.0 * np.sum(diff * (mx - my), axis=-1) + np.sum((sx - sy) ** 2, axis=(-2, -1))
    cross = -2.0 * np.sum(sx * (bl - sy), axis=(-2, -1))
    last = -2.0 * np.sum(diff * (al - my), axis=-1) + np.sum(bl * bl, axis=(-2, -1)) - np.sum(sy * sy, axis=(-2, -1))
    dsc = discount[:-1]
    incr = (ito + (gen - chi * V + cross + last) * dt) / dsc
    v0 = np.sum((Xs[..., 0, :] - Ys[..., 0, :]) ** 2, axis=-1)
    rhs = np.concatenate([v0[..., None], v0[..., None] + np.cumsum(incr, axis=-1)], axis=-1)
    lhs = np.sum((Xs - Ys) ** 2, axis=-1) / discount
    return times, lhs, rhs


@dataclass
class ItoResidualReport:
    levels: list
    median_residuals: Array
    slope: float


def ito_residual_check(model: SodeModel, pair: CoupledPair, levels: Sequence[int], chi: float = 0.0) -> ItoResidualReport:
    """Median over paths of ``max_k |LHS - RHS|`` per quadrature level, and its decay slope in the mesh."""
    meds = []
    for level in levels:
        _, lhs, rhs = perturbation_formula_terms(model, pair, chi, level)
        res = np.max(np.abs(lhs - rhs), axis=-1)
        meds.append(float(np.median(np.atleast_1d(res))))
    meds = np.array(meds)
    mesh = pair.T / 2.0 ** np.asarray(levels, dtype=float)
    slope, _ = fit_loglog(mesh, meds)
    return ItoResidualReport(list(levels), meds, slope)


# ---------------------------------------------------------------------------
# Initial-value sensitivity
# ---------------------------------------------------------------------------


@dataclass
class SlopeReport:
    scales: Array
    errors: Array
    ci_low: Array
    ci_high: Array
    slope: float
    slope_ci: tuple
    r: float
    paths: int
    master_seed: int

    def to_csv(self, first_column: str) -> str:
        return rows_to_csv([first_column, "error", "ci_low", "ci_high"],
                           list(zip(self.scales, self.errors, self.ci_low, self.ci_high)))


def slope_report(scales, sups: Array, r: float, seed: int, tag: str = "bootstrap-slope") -> SlopeReport:
    sups = np.asarray(sups, dtype=float)
    errors = lr_norm(sups, r)
    reps = bootstrap_lr(sups, r, seed, tag=tag)
    lo, hi = percentile_ci(reps)
    pos = errors > 0
    if pos.sum() >= 2:
        slope = fit_loglog(np.asarray(scales)[pos], errors[pos])[0]
        boots = np.array([fit_loglog(np.asarray(scales)[pos], rep[pos])[0] for rep in reps])
        boots = boots[np.isfinite(boots)]
        slope_ci = tuple(float(v) for v in np.quantile(boots, [0.025, 0.975])) if boots.size else (np.nan, np.nan)
    else:
        slope, slope_ci = float("nan"), (float("nan"), float("nan"))
    return SlopeReport(np.asarray(scales, dtype=float), errors, lo, hi, slope, slope_ci, r, sups.shape[0], seed)


def initial_value_sensitivity(model: SodeModel, kind, x0, deltas: Sequence[float], level: int = 10,
                              paths: int = 200, r: float = 2.0, seed: int = 0, T: float = 1.0,
                              chunk: int = DEFAULT_CHUNK, threads: int = 1) -> SlopeReport:
    """``sup_n |X_n - Y_n|_{L^r}`` for starts ``x0`` and ``x0 + delta e`` on a shared path."""
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas):
        raise ValueError("perturbation radii must be non-negative")
    x0 = np.asarray(x0, dtype=float)

    def work(idx):
        g = sample_brownian_batch(seed, idx, model.m, level, T)
        e = np.stack([derive_stream(SeedSpec(seed, i, "init")).standard_normal(model.d) for i in idx])
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        base = integrate(kind, model, x0, g.partition(), g).states
        cols = []
        for d in deltas:
            if d == 0:
                cols.append(np.zeros(len(idx)))
                continue
            other = integrate(kind, model, x0 + d * e, g.partition(), g).states
            cols.append(_sup_error(base, other))
        return np.stack(cols, axis=-1)

    sups = np.concatenate(run_chunks(work, paths, chunk, threads), axis=0)
    return slope_report(deltas, sups, r, seed)
