import numpy as np
import pytest
from scipy.integrate import simpson

from tamedsde.galerkin import (
    COSINE,
    SINE,
    SPDE_REGISTRY,
    SpectralBasis,
    SpectralField,
    apply_nonlinearity,
    cahn_hilliard_cook,
    galerkin_error_experiment,
    galerkin_step,
    initial_coeffs,
    linear_closed_form_error,
    linear_heat,
    make_spde,
    noise_coeffs,
    nonlinearity_coeffs,
    project,
    stochastic_burgers,
)

XQ = np.linspace(0.0, 1.0, 10_001)


def _quad(f):
    return simpson(f, x=XQ, axis=-1)


def _field_and_derivatives(basis, coeffs):
    """Closed-form ``v``, ``v'`` and the basis values on the quadrature grid."""
    e = basis.evaluate(XQ, coeffs.size)
    k = np.pi * basis.frequencies(coeffs.size)
    if basis.kind == SINE:
        de = np.sqrt(2.0) * k * np.cos(k * XQ[:, None])
    else:
        de = -np.sqrt(2.0) * k * np.sin(k * XQ[:, None])
    return e @ coeffs, de @ coeffs, e


def _random_coeffs(rng, n, decay=1.0):
    return rng.standard_normal(n) / np.arange(1, n + 1) ** decay


@pytest.mark.parametrize("kind", [SINE, COSINE])
def test_orthonormality(kind):
    b = SpectralBasis(kind)
    x = np.linspace(0.0, 1.0, 2**12 + 1)
    e = b.evaluate(x, 16)
    w = np.full(x.size, 1.0 / 2**12)
    w[[0, -1]] *= 0.5
    gram = e.T @ (w[:, None] * e)
    assert np.max(np.abs(gram - np.eye(16))) < 1e-8


@pytest.mark.parametrize("kind", [SINE, COSINE])
def test_eigen_relation(kind):
    b = SpectralBasis(kind)
    x = np.linspace(0.05, 0.95, 7)
    h = 1e-3
    e = b.evaluate(x, 5)
    lap = (b.evaluate(x + h, 5) - 2 * e + b.evaluate(x - h, 5)) / h**2
    if kind == SINE:
        np.testing.assert_allclose(lap, b.eigenvalues(5) * e, rtol=1e-4, atol=1e-4)
    else:
        # the cosine operator is minus the bilaplacian: Lap e = -(k pi)^2 e and lambda = -(k pi)^4
        np.testing.assert_allclose(lap, -((np.pi * b.frequencies(5)) ** 2) * e, rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(b.eigenvalues(5), -((np.pi * b.frequencies(5)) ** 4))


@pytest.mark.parametrize("kind", [SINE, COSINE])
def test_synthesis_matches_closed_form_and_parseval(kind):
    rng = np.random.default_rng(0)
    b = SpectralBasis(kind)
    c = _random_coeffs(rng, 12)
    K = 64
    vals = b.synthesize(c, K)
    np.testing.assert_allclose(vals, b.evaluate(b.grid(K), 12) @ c, atol=1e-13)
    back = b.analyze(vals, 12)
    np.testing.assert_allclose(back, c, atol=1e-13)
    assert np.sum(back**2) == pytest.approx(np.sum(c**2), rel=1e-10)


def test_project_examples():
    b = SpectralBasis(SINE)
    v = SpectralField(np.array([1.0, 2.0, 3.0]), b)
    assert np.array_equal(project(v, 2).coeffs, [1.0, 2.0])
    assert np.array_equal(project(v, 3).coeffs, v.coeffs)
    assert np.array_equal(project(project(v, 2), 2).coeffs, project(v, 2).coeffs)
    with pytest.raises(ValueError):
        project(v, 4)
    with pytest.raises(ValueError):
        project(v, 0)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_projection_tail_bound(alpha):
    rng = np.random.default_rng(int(alpha * 10))
    b = SpectralBasis(SINE)
    for _ in range(50):
        v = SpectralField(_random_coeffs(rng, 128, decay=rng.uniform(0.6, 3.0)), b)
        for N in (4, 16, 64):
            tail = np.linalg.norm(v.coeffs[N:])
            bound = N**-alpha * np.pi**-alpha * v.hr_norm(alpha / 2)
            assert tail <= bound * (1 + 1e-12)


def test_zero_field_nonlinearity():
    for model in (stochastic_burgers(), cahn_hilliard_cook()):
        out = nonlinearity_coeffs(model, np.zeros(8))
        assert np.array_equal(out, np.zeros(8))


def test_burgers_first_mode():
    model = stochastic_burgers(c=1.3)
    F = apply_nonlinearity(model, SpectralField(np.eye(8)[0], model.basis)).coeffs
    # quadrature oracle: F = c v v', projected on e_2
    v, dv, e = _field_and_derivatives(model.basis, np.eye(8)[0])
    oracle = _quad(model.c * v * dv * e[:, 1])
    assert oracle == pytest.approx(1.3 * np.pi / np.sqrt(2.0), rel=1e-9)
    assert F[1] == pytest.approx(oracle, rel=1e-12)
    np.testing.assert_allclose(np.delete(F, 1), 0.0, atol=1e-12)


def test_chc_constant_field_is_stationary():
    model = cahn_hilliard_cook()
    F = nonlinearity_coeffs(model, np.eye(8)[0])
    np.testing.assert_allclose(F, 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_nonlinearity_against_quadrature(seed):
    rng = np.random.default_rng(seed)
    burgers, chc = stochastic_burgers(c=0.7), cahn_hilliard_cook(c=0.9)
    c = rng.standard_normal(8)
    v, dv, e = _field_and_derivatives(burgers.basis, c)
    oracle = _quad(burgers.c * v * dv * e.T)
    np.testing.assert_allclose(nonlinearity_coeffs(burgers, c), oracle, atol=1e-6)
    # Lap(v^3 - v) tested against e_n equals (v^3 - v) tested against Lap e_n under Neumann conditions
    v, _, e = _field_and_derivatives(chc.basis, c)
    k2 = (np.pi * chc.basis.frequencies(8)) ** 2
    oracle = -chc.c * k2 * _quad((v**3 - v) * e.T)
    np.testing.assert_allclose(nonlinearity_coeffs(chc, c), oracle, atol=1e-6)


def test_burgers_antisymmetry():
    model = stochastic_burgers(c=1.0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = _random_coeffs(rng, 16)
        F = nonlinearity_coeffs(model, c)
        assert abs(np.dot(c, F)) <= 1e-8 * np.linalg.norm(c) ** 3


def test_grid_too_coarse_rejected():
    with pytest.raises(ValueError):
        nonlinearity_coeffs(stochastic_burgers(), np.ones(8), grid_size=16)


def test_pure_decay_step():
    model = linear_heat()
    out = galerkin_step(model, np.eye(4)[0], 0.01, np.zeros(4))
    assert out[0] == pytest.approx(0.906018, abs=1e-6)
    assert out[0] == pytest.approx(np.exp(-np.pi**2 * 0.01), rel=1e-14)


def test_zero_state_additive_noise():
    model = linear_heat()
    xi = np.array([0.3, -0.2, 0.1, 0.05])
    out = galerkin_step(model, np.zeros(4), 0.01, xi)
    np.testing.assert_allclose(out, np.exp(model.basis.eigenvalues(4) * 0.01) * xi, rtol=1e-14)


def test_energy_non_increasing_without_forcing():
    model = linear_heat()
    c = _random_coeffs(np.random.default_rng(0), 32)
    energy = [np.sum(c**2)]
    for _ in range(50):
        c = galerkin_step(model, c, 1e-3, np.zeros(32))
        energy.append(np.sum(c**2))
    assert np.all(np.diff(energy) <= 0)


def test_chc_mass_conserved():
    model = cahn_hilliard_cook(q_mass=0.0)
    rng = np.random.default_rng(1)
    c = _random_coeffs(rng, 16) * 0.3
    mass = c[0]
    q = model.noise_weights(16)
    assert q[0] == 0
    for _ in range(100):
        c = galerkin_step(model, c, 1e-4, np.sqrt(q * 1e-4) * rng.standard_normal(16))
    assert c[0] == mass


def test_multiplicative_noise_projection():
    model = stochastic_burgers(amplitude=0.0)
    xi = np.array([0.1, -0.2, 0.3, 0.05, 0.0, 0.01, 0.02, -0.03])
    # with b = 1 the noise is additive; projecting keeps the first N modes
    np.testing.assert_allclose(noise_coeffs(model, np.zeros(4), xi), xi[:4], atol=1e-14)


def test_truncations_share_low_mode_noise():
    model = linear_heat()
    rng = np.random.default_rng(2)
    ref, low = np.zeros(32), np.zeros(8)
    q = model.noise_weights(32)
    for _ in range(64):
        xi = np.sqrt(q * 1e-3) * rng.standard_normal(32)
        ref = galerkin_step(model, ref, 1e-3, xi)
        low = galerkin_step(model, low, 1e-3, xi)
    # additive linear modes decouple, so the truncation is the exact projection of the reference
    assert np.array_equal(low, ref[:8])


def test_initial_conditions():
    assert np.array_equal(initial_coeffs("smooth", 4, SpectralBasis(SINE)), [1, 0, 0, 0])
    assert np.array_equal(initial_coeffs("smooth", 4, SpectralBasis(COSINE)), [0, 1, 0, 0])
    assert np.array_equal(initial_coeffs("zero", 3), np.zeros(3))
    with pytest.raises(ValueError):
        initial_coeffs("bumpy", 3)


def test_experiment_full_truncation_is_exact():
    model = stochastic_burgers()
    rep = galerkin_error_experiment(model, [4, 16], M_ref=16, T=0.05, dt=0.05 / 64, paths=4, record_every=8,
                                    resamples=20)
    assert rep.errors[-1] == 0
    assert rep.errors[0] > 0


def test_experiment_thread_independent():
    model = stochastic_burgers()
    kw = dict(M_ref=16, T=0.05, dt=0.05 / 64, paths=6, record_every=8, chunk=2, resamples=20)
    a = galerkin_error_experiment(model, [2, 4, 8], threads=1, **kw)
    b = galerkin_error_experiment(model, [2, 4, 8], threads=3, **kw)
    assert a.to_csv() == b.to_csv()


def test_experiment_rejects_bad_lists():
    with pytest.raises(ValueError):
        galerkin_error_experiment(linear_heat(), [8, 4], M_ref=16, paths=2)
    with pytest.raises(ValueError):
        galerkin_error_experiment(linear_heat(), [32], M_ref=16, paths=2)


def test_linear_closed_form_is_decreasing_and_zero_at_full():
    e = linear_closed_form_error([4, 8, 16, 128], 128)
    assert np.all(np.diff(e) < 0) and e[-1] == 0


def test_snapshot_csv():
    v = SpectralField(np.array([1.0, 0.5]), SpectralBasis(SINE))
    lines = v.snapshot_csv().strip().splitlines()
    assert lines[0] == "x,v" and len(lines) == 513
    assert float(lines[1].split(",")[1]) == 0.0


def test_spde_registry():
    assert set(SPDE_REGISTRY) >= {"burgers", "chc"}
    assert make_spde("burgers", c=2.0).c == 2.0
    with pytest.raises(KeyError):
        make_spde("kdv")
    with pytest.raises(ValueError):
        make_spde("chc", amplitude=1.0)
