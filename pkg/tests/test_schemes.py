import numpy as np
import pytest
from scipy.integrate import solve_ivp

from tamedsde.models import SodeModel, make_model, ornstein_uhlenbeck
from tamedsde.rng import Partition, SeedSpec, coarsen_to, sample_brownian, sample_brownian_batch
from tamedsde.schemes import (
    SchemeKind,
    integrate,
    reference_solution,
    step,
    stop_threshold,
    taming_jacobian_bounds_check,
    taming_map,
)

ALL_KINDS = list(SchemeKind)


def _model(drift, d=1, m=1, diffusion=None):
    if diffusion is None:
        def diffusion(x):
            return np.zeros(np.shape(x) + (m,))
    return SodeModel("test", d, m, drift, diffusion)


def test_scheme_parse_aliases():
    assert SchemeKind.parse("em") is SchemeKind.EULER_MARUYAMA
    assert SchemeKind.parse("stopped-tamed") is SchemeKind.STOPPED_TAMED_EM
    assert SchemeKind.parse("tamed_em") is SchemeKind.TAMED_EM
    with pytest.raises(ValueError):
        SchemeKind.parse("milstein")


def test_taming_map_examples():
    assert np.array_equal(taming_map(np.zeros(3)), np.zeros(3))
    assert taming_map(np.array([3.0]))[0] == pytest.approx(0.3)


def test_taming_map_is_bounded():
    v = np.random.default_rng(0).standard_normal((100_000, 3)) * np.logspace(-3, 3, 100_000)[:, None]
    assert np.max(np.linalg.norm(taming_map(v), axis=1)) <= 0.5


def test_taming_jacobian_closed_form_points():
    h = 1e-6
    assert (taming_map(np.array([h]))[0] - taming_map(np.array([-h]))[0]) / (2 * h) == pytest.approx(1.0)
    assert (taming_map(np.array([1 + h]))[0] - taming_map(np.array([1 - h]))[0]) / (2 * h) == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("d", [1, 2, 3, 10])
def test_taming_bounds_hold(d):
    rep = taming_jacobian_bounds_check(n_samples=20_000, d=d, seed=1)
    assert rep.ok, rep
    assert rep.max_jacobian_norm >= 1.0 - 1e-6  # psi'(0) = I is sampled closely


def test_stop_threshold_examples():
    assert stop_threshold(1.0) == 1.0
    assert stop_threshold(np.exp(-4.0)) == pytest.approx(7.389056, rel=1e-7)
    assert stop_threshold(np.exp(-16.0)) == pytest.approx(54.59815, rel=1e-7)
    with pytest.raises(ValueError):
        stop_threshold(0.0)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_step_zero_coefficients_keep_state(kind):
    z = np.array([0.3, -1.2])
    out = step(kind, _model(lambda x: np.zeros_like(x), d=2), z, 0.1, np.array([0.5]))
    assert np.array_equal(out, z)


def test_stopped_step_freezes_outside_ball():
    z = np.array([11.0])
    out = step("stopped_tamed", _model(lambda x: x), z, 0.1, np.zeros(1), threshold=10.0)
    assert np.array_equal(out, z)


def test_tamed_step_value():
    out = step("tamed", _model(lambda x: x), np.array([1.0]), 0.1, np.zeros(1), threshold=10.0)
    assert out[0] == pytest.approx(1.0 + 0.1 / 1.01, rel=1e-12)
    assert out[0] == pytest.approx(1.0990099, rel=1e-7)
    stopped = step("stopped_tamed", _model(lambda x: x), np.array([1.0]), 0.1, np.zeros(1), threshold=10.0)
    assert stopped[0] == out[0]


def test_em_step_value():
    m = ornstein_uhlenbeck(2.0, 0.5)
    out = step("em", m, np.array([1.0]), 0.1, np.array([0.4]))
    assert out[0] == pytest.approx(1.0 - 0.2 + 0.2)


def test_step_batches_broadcast():
    m = make_model("lorenz")
    z = np.random.default_rng(1).normal(size=(5, 3))
    dw = np.random.default_rng(2).normal(size=(5, 3)) * 0.1
    batch = step("stopped_tamed", m, z, 0.01, dw, threshold=50.0)
    single = np.stack([step("stopped_tamed", m, z[i], 0.01, dw[i], threshold=50.0) for i in range(5)])
    np.testing.assert_allclose(batch, single, rtol=0, atol=0)


def test_one_step_partition():
    m = _model(lambda x: -x)
    g = sample_brownian(SeedSpec(0), 1, 0, 1.0)
    traj = integrate("em", m, np.array([1.0]), Partition.uniform(1.0, 1), g)
    assert traj.states.shape == (2, 1)
    assert traj.states[1, 0] == 0.0


def test_initial_state_is_recorded():
    m = make_model("vdp")
    g = sample_brownian_batch(0, range(3), m.m, 5, 1.0)
    traj = integrate("stopped_tamed", m, np.array([1.0, 1.0]), g.partition(), g)
    assert np.array_equal(traj.states[:, 0], np.ones((3, 2)))


def test_deterministic_decay_matches_exponential():
    m = _model(lambda x: -x)
    g = sample_brownian(SeedSpec(0), 1, 12, 1.0)
    traj = integrate("stopped_tamed", m, np.array([1.0]), g.partition(), g)
    assert abs(traj.final[0] - np.exp(-1.0)) < 1e-3


def test_ou_euler_rms_against_exact():
    m = ornstein_uhlenbeck(1.0, 1.0)
    g = sample_brownian_batch(17, range(1000), 1, 10, 1.0)
    em = integrate("em", m, np.array([1.0]), g.partition(), g).final[:, 0]
    exact = m.exact(np.array([1.0]), g)[:, -1, 0]
    assert np.sqrt(np.mean((em - exact) ** 2)) < 5e-2


def test_stopped_tamed_increments_and_freeze():
    # large noise and start far out so that freezing actually happens
    m = make_model("dvdp", beta1=20.0, beta2=20.0)
    g = sample_brownian_batch(5, range(200), m.m, 4, 1.0)
    traj = integrate("stopped_tamed", m, np.array([3.0, 3.0]), g.partition(), g)
    jumps = np.linalg.norm(np.diff(traj.states, axis=1), axis=-1)
    assert jumps.max() <= 0.5
    frozen = traj.stopped_at >= 0
    assert frozen.any()
    for i in np.flatnonzero(frozen):
        k = traj.stopped_at[i]
        assert np.linalg.norm(traj.states[i, k]) >= stop_threshold(g.partition().mesh)
        assert np.all(traj.states[i, k:] == traj.states[i, k])
    assert not traj.diverged().any()


def test_integrate_on_coarser_partition_uses_summed_increments():
    m = make_model("psych")
    g = sample_brownian_batch(2, range(4), 1, 8, 1.0)
    a = integrate("stopped_tamed", m, np.array([1.0, 0.5]), Partition.uniform(1.0, 32), g)
    b = integrate("stopped_tamed", m, np.array([1.0, 0.5]), Partition.uniform(1.0, 32), coarsen_to(g, 5))
    np.testing.assert_allclose(a.states, b.states, rtol=1e-12, atol=1e-12)


def test_integrate_dimension_checks():
    m = make_model("lorenz")
    g = sample_brownian(SeedSpec(0), 1, 3, 1.0)
    with pytest.raises(ValueError):
        integrate("em", m, np.zeros(3), g.partition(), g)
    g3 = sample_brownian(SeedSpec(0), 3, 3, 1.0)
    with pytest.raises(ValueError):
        integrate("em", m, np.zeros(2), g3.partition(), g3)


def test_reference_dispatches_to_exact_solution():
    m = ornstein_uhlenbeck(1.0, 1.0)
    g = sample_brownian_batch(0, range(3), 1, 6, 1.0)
    ref = reference_solution(m, np.array([1.0]), g)
    assert np.array_equal(ref.states, m.exact(np.array([1.0]), g))


def test_reference_surrogate_matches_ode_solver():
    m = _model(lambda x: -x - x**3)
    g = sample_brownian(SeedSpec(0), 1, 14, 1.0)
    ref = reference_solution(m, np.array([2.0]), g)
    ode = solve_ivp(lambda t, y: -y - y**3, (0.0, 1.0), [2.0], rtol=1e-12, atol=1e-12)
    assert abs(ref.final[0] - ode.y[0, -1]) < 1e-4


def test_em_diverges_where_tamed_does_not():
    m = _model(lambda x: -(x**3))
    g = sample_brownian(SeedSpec(0), 1, 2, 1.0)
    x0 = np.array([10.0])
    assert integrate("em", m, x0, g.partition(), g).diverged()
    assert not integrate("stopped_tamed", m, x0, g.partition(), g).diverged()
    assert not integrate("tamed", m, x0, g.partition(), g).diverged()
