import dataclasses

import numpy as np
import pytest

from thermopinn import mms, physics
from thermopinn.autodiff import Jet4
from thermopinn.errors import BalancingError, ConfigurationError, GeometryError
from thermopinn.materials import MaterialPoint, PhysicalConstants
from thermopinn.physics import (FieldJets, LossBreakdown, N_TERMS, SourceSample, TERM_NAMES, composite_loss,
                                heat_flux, mechanical_residual, stress, term_expressions, thermal_residual,
                                traction)

K = PhysicalConstants()


def const_mat(lam=0.0, mu=0.0, beta=0.0, kappa=60.0, rho=1.0, c=1.0, kappa_grad=(0.0, 0.0, 0.0)):
    one = lambda v: np.array([float(v)])
    g = lambda v=(0.0, 0.0, 0.0): np.array([v], dtype=np.float64)
    return MaterialPoint(one(kappa), one(rho), one(c), one(1.0), g(kappa_grad), g(), g(), g(),
                         one(lam), one(mu), one(beta), g(), g(), g())


def zero_jet():
    return Jet4(np.zeros(1), np.zeros((1, 4)), np.zeros((1, 4, 4)))


def linear_jet(coeffs, const=0.0):
    return Jet4(np.array([const]), np.array([coeffs], dtype=np.float64), np.zeros((1, 4, 4)))


def zero_fields(T=None):
    return FieldJets(zero_jet(), zero_jet(), zero_jet(), T or zero_jet())


NO_SRC = SourceSample(np.zeros((1, 3)), np.zeros(1))


# ---------------------------------------------------------------------------
# residuals

def test_mechanical_residual_zero_fields():
    mat = const_mat(1.0, 2.0, 3.0)
    for i in (1, 2, 3):
        assert mechanical_residual(i, zero_fields(), mat, NO_SRC)[0] == 0.0


def test_mechanical_residual_constant_temperature():
    mat = const_mat(1.0, 2.0, 3.0)
    T = linear_jet([0, 0, 0, 0], 250.0)
    for i in (1, 2, 3):
        assert mechanical_residual(i, zero_fields(T), mat, NO_SRC)[0] == 0.0
    with pytest.raises(ConfigurationError):
        mechanical_residual(4, zero_fields(T), mat, NO_SRC)


def test_mechanical_residual_term_by_term():
    # u1 = x1^2 / 2 + x2 x1 + t^2, T = 3 x1
    H = np.zeros((1, 4, 4))
    H[0, 0, 0], H[0, 0, 1], H[0, 1, 0], H[0, 3, 3] = 1.0, 1.0, 1.0, 2.0
    u1 = Jet4(np.zeros(1), np.zeros((1, 4)), H)
    jets = FieldJets(u1, zero_jet(), zero_jet(), linear_jet([3, 0, 0, 0]))
    mat = const_mat(lam=5.0, mu=7.0, beta=11.0, rho=13.0)
    # rho*2 + beta*3 - (lam+mu)*u1,11 - mu*(u1,11)
    assert mechanical_residual(1, jets, mat, NO_SRC)[0] == 13 * 2 + 11 * 3 - 12 * 1 - 7 * 1
    # i=2: -(lam+mu) * u1,21
    assert mechanical_residual(2, jets, mat, NO_SRC)[0] == -12.0


def test_thermal_residual_zero_and_harmonic():
    assert thermal_residual(zero_fields(), const_mat(), NO_SRC, K)[0] == 0.0
    T = linear_jet([1.0, -2.0, 0.5, 0.0], 10.0)
    assert thermal_residual(zero_fields(T), const_mat(kappa=60.0), NO_SRC, K)[0] == 0.0


def test_thermal_residual_keeps_conductivity_gradient():
    T = linear_jet([1.0, 0.0, 0.0, 0.0])
    r = thermal_residual(zero_fields(T), const_mat(kappa_grad=(2.0, 0.0, 0.0)), NO_SRC, K)
    assert r[0] == -2.0


@pytest.mark.parametrize("case", ["case1", "case2", "case3"])
def test_exact_fields_close_residuals(case):
    prob = mms.ProblemData.for_case(case)
    hi = 0.3 if case == "case2" else 1.0
    pts = np.random.default_rng(0).uniform(0, hi, size=(1000, 4))
    jets, mat, src = prob.jets(pts), prob.materials(pts), prob.sources(pts)
    for i in (1, 2, 3):
        r = mechanical_residual(i, jets, mat, src)
        assert np.max(np.abs(r)) <= 1e-9 * np.max(np.abs(src.f[:, i - 1]))
    r = thermal_residual(jets, mat, src, prob.constants)
    assert np.max(np.abs(r)) <= 1e-9 * np.max(np.abs(src.s))


# ---------------------------------------------------------------------------
# stress, traction, flux

def uniaxial():
    return FieldJets(linear_jet([1, 0, 0, 0]), zero_jet(), zero_jet(), zero_jet())


def test_stress_zero():
    assert not stress(zero_fields(), const_mat(1.0, 1.0, 1.0)).stress.any()


def test_pure_thermal_stress():
    st = stress(zero_fields(linear_jet([0, 0, 0, 0], 1.0)), const_mat(beta=2.5))
    np.testing.assert_array_equal(st.stress[0], -2.5 * np.eye(3))


def test_uniaxial_stress():
    st = stress(uniaxial(), const_mat(lam=3.0, mu=2.0))
    assert st.strain[0, 0, 0] == 1.0
    np.testing.assert_array_equal(np.diag(st.stress[0]), [7.0, 3.0, 3.0])
    assert not (st.stress[0] - np.diag(np.diag(st.stress[0]))).any()


@pytest.mark.parametrize("case", ["case1", "case2", "case3"])
def test_stress_symmetry_and_trace(case):
    prob = mms.ProblemData.for_case(case)
    hi = 0.3 if case == "case2" else 1.0
    pts = np.random.default_rng(1).uniform(0, hi, size=(1000, 4))
    mat = prob.materials(pts)
    st = stress(prob.jets(pts), mat)
    assert np.array_equal(st.stress, np.swapaxes(st.stress, -1, -2))
    tr_s = np.trace(st.stress, axis1=-2, axis2=-1)
    tr_e = np.trace(st.strain, axis1=-2, axis2=-1)
    T = prob.jets(pts).T.value
    rhs = (3 * mat.lam + 2 * mat.mu) * tr_e - 3 * mat.beta * T
    assert np.max(np.abs(tr_s - rhs) / np.abs(rhs)) < 1e-10


def test_traction_examples():
    np.testing.assert_array_equal(traction(np.eye(3), np.array([0, 0, 1.0])), [0, 0, 1])
    n = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(traction(-4.0 * np.eye(3), n), -4.0 * n)
    st = stress(uniaxial(), const_mat(lam=3.0, mu=2.0))
    np.testing.assert_array_equal(traction(st, np.array([[1.0, 0, 0]]))[0], [7.0, 0, 0])
    with pytest.raises(GeometryError):
        traction(np.eye(3), np.array([0, 0, 2.0]))


def test_heat_flux_examples():
    mat = const_mat(kappa=60.0)
    e1, e3 = np.array([[1.0, 0, 0]]), np.array([[0, 0, 1.0]])
    assert heat_flux(zero_fields(linear_jet([0, 0, 0, 0], 5.0)), mat, e3)[0] == 0.0
    assert heat_flux(zero_fields(linear_jet([0, 0, 1, 0])), mat, e3)[0] == -60.0
    assert heat_flux(zero_fields(linear_jet([0, 0, 1, 0])), mat, e1)[0] == 0.0
    with pytest.raises(GeometryError):
        heat_flux(zero_fields(), mat, np.array([[1.0, 1.0, 0]]))


# ---------------------------------------------------------------------------
# loss terms

def exact_evaluator(prob):
    def evaluate(points, layouts, nets):
        return list(prob.jets(points).u) + [prob.jets(points).T]
    return evaluate


def test_exact_interpolant_gives_zero_losses(cube_small):
    cs, prob, inputs = cube_small
    terms = term_expressions(exact_evaluator(prob), inputs)
    assert terms and all(float(v) == 0.0 for v in terms.values())


def test_single_dirichlet_point_mse(cube_small):
    _, _, inputs = cube_small
    v, delta = 0.37, 1e-3
    one = dataclasses.replace(inputs, dirichlet=np.array([[0.5, 0.5, 0.0, 0.0]]),
                              u_bar=np.array([[v + delta, 0, 0]]), T_bar=np.zeros(1))

    def evaluate(points, layouts, nets):
        return [linear_jet([0, 0, 0, 0], v)] * 4

    loss = term_expressions(evaluate, one, ["DBC1"])["DBC1"]
    assert loss == pytest.approx(delta ** 2, rel=1e-10)


def test_empty_set_names_term(cube_small):
    _, prob, inputs = cube_small
    assert inputs.counts["NBC"] == 0
    with pytest.raises(ConfigurationError, match="NBC2"):
        term_expressions(exact_evaluator(prob), inputs, ["NBC2"])
    no_ic = dataclasses.replace(inputs, initial=np.zeros((0, 4)))
    with pytest.raises(ConfigurationError, match="L_IC"):
        term_expressions(exact_evaluator(prob), no_ic)


def test_duplicating_points_keeps_means(cube_small):
    cs, prob, inputs = cube_small
    from conftest import small_model
    from thermopinn.objective import Objective

    model = small_model(cs, inputs)
    doubled = dataclasses.replace(
        inputs,
        interior=np.vstack([inputs.interior] * 2),
        interior_mat=inputs.interior_mat.subset(np.tile(np.arange(len(inputs.interior)), 2)),
        sources=SourceSample(np.vstack([inputs.sources.f] * 2), np.concatenate([inputs.sources.s] * 2)),
    )
    a, b = Objective(inputs).losses(model), Objective(doubled).losses(model)
    np.testing.assert_allclose(b, a, rtol=1e-14, atol=0)


CUBE_SEED7_BASELINE = [
    1.657336854272967e+22, 1.7686266199581248e+22, 1.842011102553974e+22, 9.445430017698572e+17,
    3.732839971725509e-07, 3.4972123126125885e-07, 4.2841513357861005e-07, 80.24978282543665,
    6.816070750466665e-07, 2.9567912608136093e-06, 7.266900092208441e-06, 0.0, 0.0, 0.0, 0.0,
    3.4994558265515097e-07, 2.751111716191376e-07, 3.656128084188644e-07, 112.74312605938175,
]


def test_cube_seed7_losses_positive_and_baseline():
    from thermopinn.config import load_config
    from thermopinn.objective import Objective
    from thermopinn.training import build_collocation, build_problem, initial_model

    cfg = load_config("cube", seed=7)
    cs = build_collocation(cfg)
    inputs = physics.prepare_loss_inputs(cs, build_problem(cfg))
    obj = Objective(inputs)
    losses = obj.losses(initial_model(cfg, cs, inputs))
    active = inputs.active()
    assert np.all(np.isfinite(losses))
    assert np.all(losses[active] > 0.0)
    # the cube has no Neumann faces by default
    assert not active[physics.TERM_INDEX["NBC1"]]
    np.testing.assert_allclose(losses, CUBE_SEED7_BASELINE, rtol=1e-9)


# ---------------------------------------------------------------------------
# composite loss

def test_composite_loss_examples():
    losses = np.arange(N_TERMS, dtype=float)
    bd = LossBreakdown(losses)
    assert composite_loss(bd, np.ones(N_TERMS)) == losses.sum()
    one = np.zeros(N_TERMS)
    one[5] = 0.25
    w = np.ones(N_TERMS)
    w[5] = 8.0
    assert composite_loss(LossBreakdown(one), w) == 2.0
    rng = np.random.default_rng(0)
    w = rng.uniform(0.1, 10, N_TERMS)
    bd = LossBreakdown(rng.uniform(0, 5, N_TERMS))
    assert composite_loss(bd, 2 * w) == 2 * composite_loss(bd, w)
    assert composite_loss(bd, w) == pytest.approx(float(np.dot(w, bd.losses)), rel=1e-12)


def test_composite_loss_rejects_nonpositive_weight():
    w = np.ones(N_TERMS)
    w[3] = 0.0
    with pytest.raises(BalancingError):
        composite_loss(LossBreakdown(np.ones(N_TERMS)), w)


def test_breakdown_groups_and_validation():
    bd = LossBreakdown(np.arange(N_TERMS, dtype=float))
    assert list(bd.L_PDE) == [0, 1, 2, 3]
    assert list(bd.L_ICv) == [8, 9, 10]
    assert bd["DBC4"] == 18.0
    assert list(bd.as_dict()) == list(TERM_NAMES)
    with pytest.raises(ConfigurationError):
        LossBreakdown(-np.ones(N_TERMS))


def test_loss_terms_exact_evaluator(cube_small):
    cs, prob, _ = cube_small
    bd = physics.loss_terms(exact_evaluator(prob), cs, prob)
    assert bd.total == 0.0
    assert bd.active.sum() == 15
