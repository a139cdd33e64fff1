"""SODE model zoo with Lyapunov pairs, generator evaluation and a monotonicity probe.

All coefficient functions are vectorised: a state batch of shape ``(..., d)``
maps to a drift of shape ``(..., d)`` and a diffusion of shape ``(..., d, m)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import BrownianGrid, SeedSpec, derive_stream, sample_brownian_batch, sample_brownian

Array = np.ndarray


@dataclass(frozen=True)
class LyapunovConstants:
    """Constants of the local monotonicity and exponential-moment conditions.

    ``c`` and ``alpha`` bound the generator inequality
    ``G U0 + |sigma^T grad U0|^2 / 2 + U1 <= alpha U0 + c`` and ``c``, ``q0``,
    ``q1`` enter the Lyapunov-weighted monotonicity bound on the horizon ``T``.
    """

    c: float
    alpha: float
    q0: float = 8.0
    q1: float = 8.0
    eps: Optional[float] = None
    T: float = 1.0
    p: float = 2.0


@dataclass(frozen=True)
class TestFunction:
    """A scalar function on R^d with optional analytic derivatives."""

    value: Callable[[Array], Array]
    grad: Optional[Callable[[Array], Array]] = None
    hess: Optional[Callable[[Array], Array]] = None

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class SodeModel:
    name: str
    d: int
    m: int
    drift: Callable[[Array], Array]
    diffusion: Callable[[Array], Array]
    lyapunov0: Optional[TestFunction] = None
    lyapunov1: Optional[Callable[[Array], Array]] = None
    constants: Optional[LyapunovConstants] = None
    exact_solution: Optional[Callable[..., Array]] = None
    params: dict = field(default_factory=dict)
    noise_scale: float = 1.0
    additive_noise: bool = False

    def mu(self, x: Array) -> Array:
        return self.drift(np.asarray(x, dtype=float))

    def sigma(self, x: Array) -> Array:
        s = self.diffusion(np.asarray(x, dtype=float))
        return s if self.noise_scale == 1.0 else self.noise_scale * s

    def u0(self, x: Array) -> Array:
        if self.lyapunov0 is None:
            return np.zeros(np.shape(x)[:-1])
        return self.lyapunov0.value(np.asarray(x, dtype=float))

    def u1(self, x: Array) -> Array:
        if self.lyapunov1 is None:
            return np.zeros(np.shape(x)[:-1])
        return self.lyapunov1(np.asarray(x, dtype=float))

    def exact(self, x0: Array, grid: BrownianGrid) -> Array:
        """Exact solution at every lattice time of ``grid`` (shape ``(..., n+1, d)``)."""
        if self.exact_solution is None:
            raise ValueError(f"model {self.name!r} has no exact solution")
        return self.exact_solution(x0, grid, noise_scale=self.noise_scale)

    def scale_noise(self, eps: float) -> "SodeModel":
        return dataclasses.replace(self, noise_scale=self.noise_scale * eps)

    def deterministic(self) -> "SodeModel":
        return self.scale_noise(0.0)

    def with_constants(self, constants: LyapunovConstants) -> "SodeModel":
        return dataclasses.replace(self, constants=constants)


def _stack(*cols: Array) -> Array:
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _constant_diffusion(matrix: Array) -> Callable[[Array], Array]:
    matrix = np.asarray(matrix, dtype=float)

    def diffusion(x):
        return np.broadcast_to(matrix, np.shape(x)[:-1] + matrix.shape)

    return diffusion


def _quadratic_form(scale: float) -> TestFunction:
    """``scale * |x|^2`` with derivatives."""

    def value(x):
        return scale * np.sum(x * x, axis=-1)

    def grad(x):
        return 2.0 * scale * x

    def hess(x):
        d = np.shape(x)[-1]
        return np.broadcast_to(2.0 * scale * np.eye(d), np.shape(x)[:-1] + (d, d))

    return TestFunction(value, grad, hess)


# ---------------------------------------------------------------------------
# Generator and Lyapunov conditions
# ---------------------------------------------------------------------------


def _fd_step(x: Array) -> Array:
    return np.maximum(1e-5, 1e-5 * np.linalg.norm(x, axis=-1))[..., None]


def _fd_grad(f: Callable[[Array], Array], x: Array) -> Array:
    h = _fd_step(x)
    d = x.shape[-1]
    g = np.empty_like(x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        g[..., i] = (f(x + h * e) - f(x - h * e)) / (2.0 * h[..., 0])
    return g


def _fd_hess(phi: TestFunction, x: Array) -> Array:
    h = _fd_step(x)
    d = x.shape[-1]
    out = np.empty(x.shape + (d,))
    if phi.grad is not None:
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            out[..., :, j] = (phi.grad(x + h * e) - phi.grad(x - h * e)) / (2.0 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))
    f = phi.value
    hh = h[..., 0]
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = 1.0
        for j in range(i, d):
            ej = np.zeros(d)
            ej[j] = 1.0
            v = (
                f(x + h * (ei + ej))
                - f(x + h * (ei - ej))
                - f(x - h * (ei - ej))
                + f(x - h * (ei + ej))
            ) / (4.0 * hh * hh)
            out[..., i, j] = v
            out[..., j, i] = v
    return out


def _grad_hess(phi: TestFunction, x: Array) -> tuple[Array, Array]:
    grad = phi.grad(x) if phi.grad is not None else _fd_grad(phi.value, x)
    hess = phi.hess(x) if phi.hess is not None else _fd_hess(phi, x)
    return grad, hess


def generator_apply(model: SodeModel, phi: TestFunction, x: Array) -> Array:
    """``phi'(x) mu(x) + tr(sigma sigma^T Hess phi(x)) / 2``."""
    x = np.asarray(x, dtype=float)
    grad, hess = _grad_hess(phi, x)
    s = model.sigma(x)
    drift_part = np.sum(grad * model.mu(x), axis=-1)
    # tr(s s^T H) = sum_ij (H s)_ij s_ij
    diff_part = 0.5 * np.sum((hess @ s) * s, axis=(-2, -1))
    return drift_part + diff_part


def lyapunov_excess(model: SodeModel, x: Array) -> Array:
    """``G U0 + |sigma^T grad U0|^2/2 + U1 - alpha U0 - c``; non-positive when the condition holds."""
    if model.lyapunov0 is None or model.constants is None:
        raise ValueError(f"model {model.name!r} carries no Lyapunov pair")
    x = np.asarray(x, dtype=float)
    k = model.constants
    u0 = model.lyapunov0
    grad, _ = _grad_hess(u0, x)
    st_grad = np.einsum("...ij,...i->...j", model.sigma(x), grad)
    return (
        generator_apply(model, u0, x)
        + 0.5 * np.sum(st_grad * st_grad, axis=-1)
        + model.u1(x)
        - k.alpha * u0.value(x)
        - k.c
    )


def sample_ball(rng: np.random.Generator, n: int, d: int, radius: float) -> Array:
    """Uniform samples in the closed ball of the given radius."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return g * r[:, None]


def monotonicity_lhs(model: SodeModel, x: Array, y: Array, p: float, eps: float) -> Array:
    """Ratio ``(<x-y, mu(x)-mu(y)> + (p-1)(1+eps)/2 |sigma(x)-sigma(y)|^2) / |x-y|^2``.

    Pairs with ``x == y`` evaluate to 0.
    """
    dx = x - y
    num = np.sum(dx * (model.mu(x) - model.mu(y)), axis=-1)
    ds = model.sigma(x) - model.sigma(y)
    num = num + 0.5 * (p - 1.0) * (1.0 + eps) * np.sum(ds * ds, axis=(-2, -1))
    den = np.sum(dx * dx, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def monotonicity_rhs_weight(model: SodeModel, x: Array, y: Array) -> Array:
    """Lyapunov part of the bound, without the constant ``c``."""
    k = model.constants
    growth = np.exp(k.alpha * k.T)
    out = np.zeros(np.shape(x)[:-1])
    if model.lyapunov0 is not None and np.isfinite(k.q0):
        out = out + (model.u0(x) + model.u0(y)) / (2.0 * k.q0 * k.T * growth)
    if model.lyapunov1 is not None and np.isfinite(k.q1):
        out = out + (model.u1(x) + model.u1(y)) / (2.0 * k.q1 * growth)
    return out


@dataclass
class MonotonicityReport:
    max_excess: float
    x: Array
    y: Array
    n_pairs: int

    @property
    def certified(self) -> bool:
        return self.max_excess <= 0.0


def monotonicity_probe(
    model: SodeModel,
    p: float = 2.0,
    eps: Optional[float] = None,
    n_pairs: int = 100_000,
    radius: float = 10.0,
    seed: int = 0,
) -> MonotonicityReport:
    """Worst excess of the Lyapunov-weighted local monotonicity condition on random pairs.

    Pairs are uniform in the ball; coincident pairs are redrawn. ``eps``
    defaults to ``1/c`` as in the condition's ``(1 + 1/c)`` factor.
    """
    if model.constants is None:
        raise ValueError(f"model {model.name!r} has no calibrated constants")
    k = model.constants
    if eps is None:
        eps = 1.0 / k.c
    rng = derive_stream(SeedSpec(seed, 0, "monotonicity-probe"))
    x = sample_ball(rng, n_pairs, model.d, radius)
    y = sample_ball(rng, n_pairs, model.d, radius)
    same = np.all(x == y, axis=1)
    while np.any(same):
        y[same] = sample_ball(rng, int(same.sum()), model.d, radius)
        same = np.all(x == y, axis=1)
    excess = monotonicity_lhs(model, x, y, p, eps) - k.c - monotonicity_rhs_weight(model, x, y)
    i = int(np.argmax(excess))
    return MonotonicityReport(float(excess[i]), x[i], y[i], n_pairs)


def calibrate_c(
    model: SodeModel,
    p: float = 2.0,
    radius: float = 12.0,
    n: int = 200_000,
    floor: float = 1.0,
    seed: int = 20140101,
) -> float:
    """Brute-force a monotonicity constant ``c >= floor`` valid on the ball.

    The supremum of the ratio is approached along the diagonal, so half the
    pairs are near-coincident. ``eps = 1`` is used, which is conservative
    for any ``c >= 1``.
    """
    rng = derive_stream(SeedSpec(seed, 0, "calibrate"))
    half = n // 2
    x = sample_ball(rng, n, model.d, radius)
    y = np.empty_like(x)
    y[:half] = sample_ball(rng, half, model.d, radius)
    step = rng.standard_normal((n - half, model.d)) * 10.0 ** rng.uniform(-6, 0, (n - half, 1))
    y[half:] = x[half:] + step
    excess = monotonicity_lhs(model, x, y, p, 1.0) - monotonicity_rhs_weight(model, x, y)
    need = float(np.max(excess))
    return max(floor, 1.25 * need + 0.5) if need > 0 else floor


def _finish(model: SodeModel, alpha: float, c_gen: float, q0=8.0, q1=8.0, T=1.0) -> SodeModel:
    """Attach constants: analytic generator pair, numerically calibrated monotonicity ``c``."""
    provisional = model.with_constants(LyapunovConstants(c=0.0, alpha=alpha, q0=q0, q1=q1, T=T))
    c_mono = calibrate_c(provisional)
    return model.with_constants(LyapunovConstants(c=max(c_gen, c_mono), alpha=alpha, q0=q0, q1=q1, T=T))


# ---------------------------------------------------------------------------
# Zoo
# ---------------------------------------------------------------------------


def lorenz_bounded(alpha1=1.0, alpha2=2.0, alpha3=1.0, beta=1.0, T: float = 1.0) -> SodeModel:
    """Stochastic Lorenz system with additive noise ``sqrt(beta) I``."""
    if min(alpha1, alpha2, alpha3) < 0 or beta <= 0:
        raise ValueError("need alpha_i >= 0 and beta > 0")

    def drift(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return _stack(alpha1 * (x2 - x1), alpha2 * x1 - x2 - x1 * x3, x1 * x2 - alpha3 * x3)

    model = SodeModel(
        "lorenz", 3, 3, drift, _constant_diffusion(np.sqrt(beta) * np.eye(3)),
        lyapunov0=_quadratic_form(1.0),
        params=dict(alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, beta=beta),
        additive_noise=True,
    )
    # 2<x,mu> <= (alpha1+alpha2)|x|^2, |sigma^T 2x|^2/2 = 2 beta |x|^2, tr part = 3 beta
    return _finish(model, alpha=alpha1 + alpha2 + 2.0 * beta, c_gen=3.0 * beta, q1=np.inf, T=T)


def _affine_row(beta1: float, beta2: float):
    """``g(x) u = beta1 x u1 + beta2 u2`` as a row of length 2, and its growth constant."""

    def g(x1):
        return _stack(beta1 * x1, beta2 * np.ones_like(x1))

    return g, max(beta1**2, beta2**2, 1e-12)


def _second_component_noise(g, m: int):
    def diffusion(x):
        row = g(x[..., 0])
        out = np.zeros(np.shape(x)[:-1] + (2, m))
        out[..., 1, :] = row
        return out

    return diffusion


def van_der_pol(gamma=1.0, delta=1.0, alpha=1.0, beta1=0.5, beta2=0.5, g=None, c_g=None,
                T: float = 1.0) -> SodeModel:
    """Stochastic van der Pol oscillator; noise ``(0, g(x1) u)``.

    ``g`` maps ``x1`` to a row in R^m with ``|g(x)|^2 <= c_g (1 + x^2)``. The
    default is the affine row ``(beta1 x, beta2)``.
    """
    if alpha <= 0 or gamma < 0 or delta < 0:
        raise ValueError("need alpha > 0 and gamma, delta >= 0")
    if g is None:
        g, c_g = _affine_row(beta1, beta2)
    elif c_g is None:
        raise ValueError("a custom g needs its growth constant c_g")
    m = np.shape(g(np.zeros(1)))[-1]
    theta = alpha / (4.0 * c_g)

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _stack(x2, (gamma - alpha * x1 * x1) * x2 - delta * x1)

    def u1(x):
        return theta * (alpha - 2.0 * c_g * theta) * (x[..., 0] * x[..., 1]) ** 2

    model = SodeModel(
        "vdp", 2, m, drift, _second_component_noise(g, m),
        lyapunov0=_quadratic_form(theta / 2.0), lyapunov1=u1,
        params=dict(gamma=gamma, delta=delta, alpha=alpha, c_g=c_g, theta=theta),
    )
    k = abs(1.0 - delta) / 2.0 + gamma + c_g / 2.0 + c_g * theta / 2.0
    return _finish(model, alpha=2.0 * k, c_gen=theta * c_g / 2.0, T=T)


def duffing_van_der_pol(alpha1=1.0, alpha2=0.5, alpha3=1.0, beta1=0.5, beta2=0.5, g=None, c_g=None,
                        T: float = 1.0) -> SodeModel:
    """Stochastic Duffing-van der Pol oscillator; default ``g(x)u = beta1 x u1 + beta2 u2``."""
    if alpha3 <= 0:
        raise ValueError("alpha3 must be positive")
    if g is None:
        g, c_g = _affine_row(beta1, beta2)
    elif c_g is None:
        raise ValueError("a custom g needs its growth constant c_g")
    m = np.shape(g(np.zeros(1)))[-1]
    theta = alpha3 / (2.0 * c_g)

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _stack(x2, alpha2 * x2 - alpha1 * x1 - alpha3 * x1 * x1 * x2 - x1**3)

    def value(x):
        return 0.5 * theta * (0.5 * x[..., 0] ** 4 + x[..., 1] ** 2)

    def grad(x):
        return theta * _stack(x[..., 0] ** 3, x[..., 1])

    def hess(x):
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 0, 0] = 3.0 * theta * x[..., 0] ** 2
        out[..., 1, 1] = theta
        return out

    def u1(x):
        return theta * (alpha3 - c_g * theta) * (x[..., 0] * x[..., 1]) ** 2

    model = SodeModel(
        "dvdp", 2, m, drift, _second_component_noise(g, m),
        lyapunov0=TestFunction(value, grad, hess), lyapunov1=u1,
        params=dict(alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, c_g=c_g, theta=theta),
    )
    a = abs(alpha1) / 2.0 + c_g / 2.0
    b = abs(alpha2) + abs(alpha1) / 2.0 + c_g * theta / 2.0
    return _finish(model, alpha=a + 2.0 * b, c_gen=theta * (c_g / 2.0 + a), T=T)


def psychology_model(alpha=1.0, delta=1.0, beta=1.0, q=3.0, T: float = 1.0) -> SodeModel:
    """Two-dimensional experimental psychology model with rotational noise."""
    if alpha <= 0 or delta <= 0:
        raise ValueError("alpha and delta must be positive")
    if q < 3:
        raise ValueError("q must be >= 3")

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        w = delta + 4.0 * alpha * x1
        return _stack(x2 * x2 * w - 0.5 * beta**2 * x1, -x1 * x2 * w - 0.5 * beta**2 * x2)

    def diffusion(x):
        return (beta * _stack(-x[..., 1], x[..., 0]))[..., None]

    def value(x):
        return np.linalg.norm(x, axis=-1) ** q

    def grad(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return q * r ** (q - 2) * x

    def hess(x):
        r = np.linalg.norm(x, axis=-1)[..., None, None]
        d = np.shape(x)[-1]
        outer = x[..., :, None] * x[..., None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            second = np.where(r > 0, q * (q - 2) * r ** (q - 4) * outer, 0.0)
        return q * r ** (q - 2) * np.eye(d) + second

    model = SodeModel(
        "psych", 2, 1, drift, diffusion,
        lyapunov0=TestFunction(value, grad, hess),
        params=dict(alpha=alpha, delta=delta, beta=beta, q=q),
    )
    # <x, mu> = -beta^2|x|^2/2 and sigma^T x = 0, so G U0 vanishes identically
    return _finish(model, alpha=0.0, c_gen=0.0, q1=np.inf, T=T)


def double_well(d: int = 1) -> TestFunction:
    """``V(x) = (|x|^2 - 1)^2 / 4``."""

    def value(x):
        return 0.25 * (np.sum(x * x, axis=-1) - 1.0) ** 2

    def grad(x):
        return (np.sum(x * x, axis=-1, keepdims=True) - 1.0) * x

    def hess(x):
        s = np.sum(x * x, axis=-1)[..., None, None]
        return (s - 1.0) * np.eye(d) + 2.0 * x[..., :, None] * x[..., None, :]

    return TestFunction(value, grad, hess)


def harmonic(d: int = 1) -> TestFunction:
    """``V(x) = |x|^2 / 2``."""
    return _quadratic_form(0.5)


def overdamped_langevin(potential: Optional[TestFunction] = None, beta=1.0, d: int = 1,
                        theta_v: float = 0.0, laplacian_bound=None, T: float = 1.0) -> SodeModel:
    """Brownian dynamics ``dX = -grad V dt + sqrt(beta) dW``.

    ``laplacian_bound = (c_v)`` must satisfy ``Lap V <= c_v + c_v V + theta_v |grad V|^2``;
    for the default double well it is derived in closed form.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not 0 <= theta_v < 2.0 / beta:
        raise ValueError("theta_v must lie in [0, 2/beta)")
    if potential is None:
        potential = double_well(d)
        # Lap V = (d+2)|x|^2 - d <= 4 V + 2 + (d+2)^2/4
        lap_a, lap_b = 4.0, 2.0 + (d + 2) ** 2 / 4.0
    elif laplacian_bound is not None:
        lap_a = lap_b = float(laplacian_bound)
    else:
        raise ValueError("a custom potential needs laplacian_bound")
    theta = (2.0 / beta - theta_v) / 2.0

    def drift(x):
        return -potential.grad(x)

    def value(x):
        return theta * potential.value(x)

    def grad(x):
        return theta * potential.grad(x)

    def hess(x):
        return theta * potential.hess(x)

    def u1(x):
        g = potential.grad(x)
        return theta * (1.0 - 0.5 * beta * (theta_v + theta)) * np.sum(g * g, axis=-1)

    model = SodeModel(
        "langevin-od", d, d, drift, _constant_diffusion(np.sqrt(beta) * np.eye(d)),
        lyapunov0=TestFunction(value, grad, hess), lyapunov1=u1,
        params=dict(beta=beta, theta_v=theta_v, theta=theta),
        additive_noise=True,
    )
    # expression = theta [beta Lap V / 2 + (theta_v beta / 2) |grad V|^2 ...] <= beta lap_a/2 U0 + theta beta lap_b / 2
    return _finish(model, alpha=0.5 * beta * lap_a, c_gen=0.5 * theta * beta * lap_b, T=T)


def duffing_oscillator(lam=1.0, gamma=0.5, beta=1.0, theta=1.0, T: float = 1.0) -> SodeModel:
    """Stochastic Duffing oscillator with additive noise, ``V(x) = x^2/2 + lam x^4/4``."""
    if lam <= 0 or beta <= 0 or gamma < 0:
        raise ValueError("need lam, beta > 0 and gamma >= 0")

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _stack(x2, -x1 - lam * x1**3 - gamma * x2)

    def diffusion(x):
        out = np.zeros(np.shape(x)[:-1] + (2, 1))
        out[..., 1, 0] = np.sqrt(beta)
        return out

    def value(x):
        x1, x2 = x[..., 0], x[..., 1]
        return theta * (x1**2 + 0.25 * lam * x1**4 + 0.5 * x2**2)

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        return theta * _stack(2.0 * x1 + lam * x1**3, x2)

    def hess(x):
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 0, 0] = theta * (2.0 + 3.0 * lam * x[..., 0] ** 2)
        out[..., 1, 1] = theta
        return out

    model = SodeModel(
        "duffing", 2, 1, drift, diffusion,
        lyapunov0=TestFunction(value, grad, hess),
        params=dict(lam=lam, gamma=gamma, beta=beta, theta=theta),
        additive_noise=True,
    )
    # expression <= theta(x1^2 + x2^2)/2 + beta theta^2 x2^2/2 + beta theta/2
    return _finish(model, alpha=1.5 + beta * theta, c_gen=0.5 * beta * theta, q1=np.inf, T=T)


def _ou_exact(theta_rev: float, s: float, d: int):
    def exact(x0, grid: BrownianGrid, noise_scale: float = 1.0) -> Array:
        x0 = np.asarray(x0, dtype=float)
        lead = grid.increments.shape[:-2]
        n = grid.n_steps
        if s * noise_scale == 0.0:
            t = np.arange(n + 1) * grid.dt
            decay = np.exp(-theta_rev * t)[:, None]
            return np.broadcast_to(decay * x0, lead + (n + 1, d)).copy()
        src = _source_ensemble(grid)
        dw = src.increments
        h = src.dt
        # joint law of (dW, int e^{-theta(h-u)} dW_u) over one fine step
        a = np.exp(-theta_rev * h)
        cov = (1.0 - a) / theta_rev
        var = (1.0 - a * a) / (2.0 * theta_rev)
        resid = np.sqrt(max(var - cov * cov / h, 0.0))
        z = _aux_normals(src)
        conv = (cov / h) * dw + resid * z
        x = np.empty(dw.shape[:-2] + (dw.shape[-2] + 1, d))
        x[..., 0, :] = x0
        amp = s * noise_scale
        for k in range(dw.shape[-2]):
            x[..., k + 1, :] = a * x[..., k, :] + amp * conv[..., k, :]
        stride = 2 ** (src.level - grid.level)
        return x[..., ::stride, :]

    return exact


def _source_ensemble(grid: BrownianGrid) -> BrownianGrid:
    """Regenerate the grid at the level its increments were drawn at."""
    if grid.level == grid.source_level:
        return grid
    if not grid.seeds:
        raise ValueError("grid was coarsened without seeds; cannot regenerate fine increments")
    if grid.batched:
        src = sample_brownian_batch(
            grid.seeds[0].master_seed, [s.path_index for s in grid.seeds],
            grid.dims, grid.source_level, grid.horizon, grid.seeds[0].stream_tag,
        )
    else:
        src = sample_brownian(grid.seeds[0], grid.dims, grid.source_level, grid.horizon)
    from .rng import coarsen_to

    if coarsen_to(src, grid.level).checksum() != grid.checksum():
        raise ValueError("regenerated Brownian path does not match the supplied grid")
    return src


def _aux_normals(src: BrownianGrid) -> Array:
    seeds = src.seeds
    shape = src.increments.shape[-2:]
    if not seeds:
        raise ValueError("exact OU simulation needs a seeded Brownian grid")
    draws = [derive_stream(s.with_tag(s.stream_tag + "/ou-aux")).standard_normal(shape) for s in seeds]
    return np.stack(draws) if src.batched else draws[0]


def ornstein_uhlenbeck(theta_rev=1.0, s=1.0, d: int = 1, T: float = 1.0) -> SodeModel:
    """``dX = -theta_rev X dt + s dW`` with an exact solution on any seeded grid."""
    if theta_rev <= 0 or s <= 0:
        raise ValueError("theta_rev and s must be positive")

    def drift(x):
        return -theta_rev * x

    vartheta = theta_rev / (2.0 * s * s)
    model = SodeModel(
        "ou", d, d, drift, _constant_diffusion(s * np.eye(d)),
        lyapunov0=_quadratic_form(vartheta),
        exact_solution=_ou_exact(theta_rev, s, d),
        params=dict(theta_rev=theta_rev, s=s),
        additive_noise=True,
    )
    # globally monotone: ratio is -theta_rev, so any c >= 1 certifies
    return model.with_constants(
        LyapunovConstants(c=max(1.0, vartheta * s * s * d), alpha=0.0, q0=np.inf, q1=np.inf, T=T)
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelEntry:
    factory: Callable[..., SodeModel]
    defaults: dict
    x0: tuple
    section: str
    description: str


REGISTRY: dict[str, ModelEntry] = {
    "lorenz": ModelEntry(lorenz_bounded, dict(alpha1=1.0, alpha2=2.0, alpha3=1.0, beta=1.0),
                         (0.5, 0.5, 0.5), "3.1.2", "stochastic Lorenz equation with bounded noise"),
    "vdp": ModelEntry(van_der_pol, dict(gamma=1.0, delta=1.0, alpha=1.0, beta1=0.5, beta2=0.5),
                      (1.0, 1.0), "3.1.3", "stochastic van der Pol oscillator"),
    "dvdp": ModelEntry(duffing_van_der_pol, dict(alpha1=1.0, alpha2=0.5, alpha3=1.0, beta1=0.5, beta2=0.5),
                       (1.0, 1.0), "3.1.4", "stochastic Duffing-van der Pol oscillator"),
    "psych": ModelEntry(psychology_model, dict(alpha=1.0, delta=1.0, beta=1.0, q=3.0),
                        (1.0, 0.5), "3.1.5", "experimental psychology model"),
    "langevin-od": ModelEntry(overdamped_langevin, dict(beta=1.0, d=1),
                              (0.5,), "3.1.6", "overdamped Langevin dynamics, double-well potential"),
    "duffing": ModelEntry(duffing_oscillator, dict(lam=1.0, gamma=0.5, beta=1.0),
                          (1.0, 0.0), "3.1.7", "stochastic Duffing oscillator with additive noise"),
    "ou": ModelEntry(ornstein_uhlenbeck, dict(theta_rev=1.0, s=1.0, d=1),
                     (1.0,), "oracle", "Ornstein-Uhlenbeck process (exact Gaussian solution)"),
}


def make_model(model_id: str, **overrides) -> SodeModel:
    try:
        entry = REGISTRY[model_id]
    except KeyError:
        raise KeyError(f"unknown model id {model_id!r}; known: {sorted(REGISTRY)}") from None
    unknown = set(overrides) - set(entry.defaults) - {"T"}
    if unknown:
        raise ValueError(f"unknown parameters for {model_id!r}: {sorted(unknown)}")
    return entry.factory(**{**entry.defaults, **overrides})


def default_x0(model_id: str) -> np.ndarray:
    return np.array(REGISTRY[model_id].x0, dtype=float)
