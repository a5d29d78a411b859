import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singsmooth.errors import DimensionError, ParameterError
from singsmooth.penalties import (KINDS, Penalty, SeparablePenalty, apply_separable_prox,
                                  evaluate, prox, prox_conjugate, separable_evaluate,
                                  separable_prox_conjugate, subgradient_interval, values)
from singsmooth.reference import prox_oracle

SAMPLES = {
    "quadratic": Penalty.quadratic(),
    "l1": Penalty.l1(),
    "quantile": Penalty.quantile(0.3),
    "huber": Penalty.huber(1.5),
    "quantile_huber": Penalty.quantile_huber(0.2, 0.7),
    "vapnik": Penalty.vapnik(0.4),
    "hubnik": Penalty.hubnik(0.05, 1.0),
    "elastic_net": Penalty.elastic_net(2.0),
    "box": Penalty.box(-1.0, 2.0),
}


def test_samples_cover_all_kinds():
    assert set(SAMPLES) == set(KINDS)


@pytest.mark.parametrize("p,alpha,z,expected", [
    (Penalty.quadratic(), 1.0, [2.0], [1.0]),
    (Penalty.l1(), 1.0, [3.0, -0.5, 0.0], [2.0, 0.0, 0.0]),
    (Penalty.l1(), 3.0, [1.0], [0.0]),
    (Penalty.quantile(0.3), 1.0, [2.0, -2.0], [1.3, -1.7]),
    (Penalty.huber(1.0), 1.0, [3.0, 0.5], [2.0, 0.25]),
    (Penalty.vapnik(0.5), 1.0, [0.3, 2.0, -2.0, 1.2], [0.3, 1.0, -1.0, 0.5]),
    (Penalty.hubnik(0.05, 1.0), 1.0, [0.04], [0.04]),
    (Penalty.box(-1.0, 1.0), 0.7, [5.0, -3.0, 0.2], [1.0, -1.0, 0.2]),
    (Penalty.elastic_net(), 1.0, [4.0], [1.0]),
])
def test_prox_known_values(p, alpha, z, expected):
    np.testing.assert_allclose(prox(p, alpha, np.array(z)), expected, atol=1e-14)


def test_huber_prox_at_kappa_differs_from_alpha():
    # kappa=2, alpha=1, z=3: minimiser of (x-3)^2/2 + huber_2(x) sits at 1.5
    assert prox(Penalty.huber(2.0), 1.0, np.array([3.0]))[0] == pytest.approx(1.5)


@pytest.mark.parametrize("kind", KINDS)
def test_prox_matches_oracle(kind):
    p = SAMPLES[kind]
    rng = np.random.default_rng(7)
    z = rng.normal(scale=3.0, size=200)
    for alpha in (0.1, 1.0, 4.0):
        np.testing.assert_allclose(prox(p, alpha, z), prox_oracle(p, alpha, z), atol=1e-8)


@pytest.mark.parametrize("kind", KINDS)
def test_moreau_identity_unit_step(kind):
    p = SAMPLES[kind]
    z = np.linspace(-6, 6, 241)
    assert np.max(np.abs(prox(p, 1.0, z) + prox_conjugate(p, 1.0, z) - z)) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("sigma", [0.05, 0.6, 7.0])
def test_moreau_identity_general_step(kind, sigma):
    p = SAMPLES[kind]
    z = np.linspace(-6, 6, 241)
    lhs = prox_conjugate(p, sigma, z) + sigma * prox(p, 1.0 / sigma, z / sigma)
    assert np.max(np.abs(lhs - z)) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_prox_is_nonexpansive_and_monotone(kind):
    p = SAMPLES[kind]
    z = np.sort(np.random.default_rng(1).normal(scale=4, size=300))
    x = prox(p, 0.8, z)
    assert np.all(np.diff(x) >= -1e-14)
    assert np.all(np.abs(np.diff(x)) <= np.diff(z) + 1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_prox_residual_is_a_subgradient(kind):
    p = SAMPLES[kind]
    z = np.random.default_rng(2).normal(scale=3, size=200)
    alpha = 0.7
    x = prox(p, alpha, z)
    lo, hi = subgradient_interval(p, x, tol=1e-9)
    g = (z - x) / alpha
    assert np.all(g >= lo - 1e-9) and np.all(g <= hi + 1e-9)


@pytest.mark.parametrize("kind", ["quadratic", "l1", "huber", "vapnik", "hubnik", "elastic_net"])
def test_symmetric_kinds_are_odd(kind):
    p = SAMPLES[kind]
    z = np.linspace(-4, 4, 81)
    np.testing.assert_allclose(prox(p, 1.3, -z), -prox(p, 1.3, z), atol=1e-14)


@pytest.mark.parametrize("kind", ["quantile", "quantile_huber"])
def test_reflection_swaps_tau(kind):
    p = SAMPLES[kind]
    r = p.reflected()
    assert r.tau == pytest.approx(1 - p.tau)
    z = np.linspace(-4, 4, 81)
    np.testing.assert_allclose(values(r, z), values(p, -z))
    np.testing.assert_allclose(prox(r, 0.9, z), -prox(p, 0.9, -z), atol=1e-14)


def test_quantile_huber_at_half_is_huber():
    z = np.linspace(-5, 5, 101)
    qh = Penalty.quantile_huber(0.5, 1.2)
    np.testing.assert_allclose(values(qh, z), values(Penalty.huber(1.2), z))
    np.testing.assert_allclose(prox(qh, 2.0, z), prox(Penalty.huber(1.2), 2.0, z))


def test_hubnik_zero_epsilon_is_huber():
    z = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(prox(Penalty.hubnik(0.0, 0.8), 1.5, z),
                               prox(Penalty.huber(0.8), 1.5, z))


def test_scale_multiplies_step():
    z = np.linspace(-3, 3, 31)
    np.testing.assert_allclose(prox(Penalty.huber(1.0, scale=2.5), 0.4, z),
                               prox(Penalty.huber(1.0), 1.0, z))


def test_box_values_and_vector_bounds():
    p = Penalty.box([0.0, -np.inf], [1.0, 2.0])
    assert evaluate(p, np.array([0.5, -10.0])) == 0.0
    assert evaluate(p, np.array([1.5, 0.0])) == np.inf
    np.testing.assert_array_equal(prox(p, 1.0, np.array([3.0, 3.0])), [1.0, 2.0])
    with pytest.raises(DimensionError):
        prox(p, 1.0, np.zeros(3))


@pytest.mark.parametrize("bad", [
    lambda: Penalty.quantile(0.0),
    lambda: Penalty.quantile(1.0),
    lambda: Penalty.huber(0.0),
    lambda: Penalty.vapnik(-0.1),
    lambda: Penalty.box(1.0, 0.0),
    lambda: Penalty.l1(scale=-1.0),
    lambda: Penalty("cauchy"),
])
def test_invalid_parameters(bad):
    with pytest.raises(ParameterError):
        bad()


@pytest.mark.parametrize("fn", [prox, prox_conjugate])
def test_nonpositive_step_rejected(fn):
    with pytest.raises(ParameterError):
        fn(Penalty.l1(), 0.0, np.ones(2))


@pytest.mark.parametrize("kind", KINDS)
def test_json_round_trip(kind):
    p = SAMPLES[kind]
    assert Penalty.from_dict(p.to_dict()) == p


def test_json_example():
    p = Penalty.from_dict({"kind": "hubnik", "epsilon": 0.05, "kappa": 1.0, "scale": 1.0})
    assert p == Penalty.hubnik(0.05, 1.0)
    with pytest.raises(ParameterError):
        Penalty.from_dict({"kind": "huber"})


def test_longdouble_is_preserved():
    z = np.array([1.0, -2.0], dtype=np.longdouble)
    assert values(Penalty.huber(1.0), z).dtype == np.longdouble


def test_separable_groups_and_uncovered_coordinates():
    sp = SeparablePenalty(((0, 2, Penalty.l1()), (3, 2, Penalty.l1()),
                           (5, 1, Penalty.box(0.0, 1.0))), 7)
    assert len(sp.groups) == 2
    z = np.array([3.0, -0.5, 9.0, 2.0, 0.1, 4.0, -9.0])
    x = apply_separable_prox(sp, 1.0, z)
    np.testing.assert_allclose(x, [2.0, 0.0, 9.0, 1.0, 0.0, 1.0, -9.0])
    c = separable_prox_conjugate(sp, 1.0, z)
    assert c[2] == 0.0 and c[6] == 0.0
    assert separable_evaluate(sp, np.array([1.0, -1, 5, 0, 0, 0.5, 5])) == pytest.approx(2.0)


def test_separable_overlap_rejected():
    with pytest.raises(DimensionError):
        SeparablePenalty(((0, 3, Penalty.l1()), (2, 2, Penalty.l1())))


def test_separable_wrong_length_rejected():
    sp = SeparablePenalty.single(Penalty.l1(), 4)
    with pytest.raises(DimensionError):
        apply_separable_prox(sp, 1.0, np.zeros(5))


finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.01, 20)
unit = st.floats(0.01, 0.99)


@st.composite
def penalties(draw):
    kind = draw(st.sampled_from(KINDS))
    scale = draw(positive)
    if kind == "quantile":
        return Penalty.quantile(draw(unit), scale)
    if kind == "huber":
        return Penalty.huber(draw(positive), scale)
    if kind == "quantile_huber":
        return Penalty.quantile_huber(draw(unit), draw(positive), scale)
    if kind == "vapnik":
        return Penalty.vapnik(draw(st.floats(0, 5)), scale)
    if kind == "hubnik":
        return Penalty.hubnik(draw(st.floats(0, 5)), draw(positive), scale)
    if kind == "box":
        a, b = sorted((draw(finite), draw(finite)))
        return Penalty.box(a, b)
    return Penalty(kind, scale)


@settings(max_examples=300, deadline=None)
@given(penalties(), positive, finite)
def test_prox_minimises_its_objective(p, alpha, z):
    x = prox(p, alpha, np.array([z]))[0]

    def F(v):
        return (v - z) ** 2 / (2 * alpha) + values(p, np.array([v]))[0]

    fx = F(x)
    assert np.isfinite(fx)
    for d in (1e-3, 1e-1, 1.0):
        assert fx <= F(x + d) + 1e-9 * (1 + abs(fx))
        assert fx <= F(x - d) + 1e-9 * (1 + abs(fx))


@settings(max_examples=300, deadline=None)
@given(penalties(), positive, finite)
def test_moreau_identity_property(p, sigma, z):
    zz = np.array([z])
    lhs = prox_conjugate(p, sigma, zz) + sigma * prox(p, 1.0 / sigma, zz / sigma)
    assert abs(lhs[0] - z) <= 1e-10 * (1 + abs(z))
