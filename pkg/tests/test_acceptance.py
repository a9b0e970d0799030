"""Acceptance gate.

Each criterion prints one ``PASS``/``FAIL`` line, repeated in the terminal
summary.  Criteria 3, 4, 5 and 8 train full-size models and take the bulk of
the runtime (roughly two hours on one core).
"""

import zlib
from decimal import Decimal, localcontext
from types import SimpleNamespace

import numpy as np
import pytest

from thermopinn import autodiff as ad
from thermopinn import balancing, config, geometry, mms, physics, training
from thermopinn.network import forward_jet, init_params
from thermopinn.objective import Objective

from conftest import central_diff, rel_err, record_acceptance, second_diff, small_model

pytestmark = pytest.mark.acceptance

STRESS = ("σ11", "σ22", "σ33")
FLUX = ("T,1", "T,2", "T,3")


def report(number: int, ok: bool, detail: str):
    record_acceptance(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# 1. zero-residual oracle

N_ORACLE = 1000


def _box_faces(rng, lo, hi, n):
    """Uniform points on the faces of an axis-aligned box with outward normals."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pts = rng.uniform(lo, hi, size=(n, 3))
    axis = rng.integers(0, 3, n)
    side = rng.integers(0, 2, n)
    normals = np.zeros((n, 3))
    for k in range(n):
        a = axis[k]
        pts[k, a] = hi[a] if side[k] else lo[a]
        normals[k, a] = 1.0 if side[k] else -1.0
    return pts, normals


def oracle_points(shape: str, seed: int):
    rng = np.random.default_rng(seed)
    if shape == "comb":
        cs = geometry.sample_comb(n_interior=N_ORACLE, n_boundary=N_ORACLE, seed=seed)
        inner, surf, normals = cs.interior_space, cs.boundary_space, cs.boundary_normals
        tf = 2.0
    else:
        hi = [1.0, 1.0, 1.0] if shape == "cube" else [1.0, 1.0, 1e-3]
        inner = rng.uniform(0.0, hi, size=(N_ORACLE, 3))
        surf, normals = _box_faces(rng, [0, 0, 0], hi, N_ORACLE)
        tf = 1.0
    t = lambda n: rng.uniform(0.0, tf, size=(n, 1))  # noqa: E731
    return SimpleNamespace(
        interior=np.hstack([inner, t(len(inner))]),
        initial=np.hstack([inner, np.zeros((len(inner), 1))]),
        dirichlet=np.hstack([surf, t(len(surf))]),
        neumann=np.hstack([surf, t(len(surf))]),
        neumann_normals=normals,
    )


def term_scales(inputs) -> dict:
    """Mean square of the data each term is measured against."""
    ms = lambda a: float(np.mean(np.square(a)))  # noqa: E731
    s = {f"PDE{i + 1}": ms(inputs.sources.f[:, i]) for i in range(3)}
    s["PDE4"] = ms(inputs.sources.s)
    for i in range(3):
        s[f"IC{i + 1}"] = ms(inputs.u_hat[:, i])
        s[f"ICv{i + 1}"] = ms(inputs.v_hat[:, i])
        s[f"NBC{i + 1}"] = ms(inputs.p_bar[:, i])
        s[f"DBC{i + 1}"] = ms(inputs.u_bar[:, i])
    s["IC4"], s["NBC4"], s["DBC4"] = ms(inputs.T_hat), ms(inputs.q_bar), ms(inputs.T_bar)
    return s


def _oracle_ratio(prob, pts) -> tuple[float, str]:
    inputs = physics.prepare_loss_inputs(pts, prob)

    def exact(points, layouts, nets):
        j = prob.jets(points)
        return list(j.u) + [j.T]

    terms = physics.term_expressions(exact, inputs)
    scales = term_scales(inputs)
    assert set(terms) == set(physics.TERM_NAMES)
    worst, name = 0.0, ""
    for n, v in terms.items():
        r = float(v) / scales[n] if scales[n] > 0 else float(v)
        if r >= worst:
            worst, name = r, n
    return worst, name


def test_criterion_1_zero_residual(tmp_path):
    worst, where = 0.0, ""
    for shape in ("cube", "coating", "comb", "point-cloud"):
        for case in ("case1", "case2", "case3"):
            # the case-2 trigonometric factors turn negative on the unit cube;
            # the residual identity is algebraic so the positivity guard is lifted there
            check = not (case == "case2" and shape in ("cube", "coating"))
            prob = mms.ProblemData.for_case(case, check=check)
            if shape == "point-cloud":
                cs = geometry.sample_comb(n_interior=N_ORACLE, n_boundary=N_ORACLE, seed=11)
                path = geometry.write_point_cloud(tmp_path / "cloud.csv", cs)
                back = geometry.load_point_cloud(path, geometry.TimeGrid(0, 2, 0.2))
                pts = SimpleNamespace(interior=geometry.random_interior_times(back.interior_space, (0.0, 2.0), 11),
                                      initial=back.initial, dirichlet=back.dirichlet, neumann=back.neumann,
                                      neumann_normals=back.neumann_normals)
            else:
                pts = oracle_points(shape, seed=zlib.crc32(f"{shape}/{case}".encode()))
            r, name = _oracle_ratio(prob, pts)
            if r >= worst:
                worst, where = r, f"{shape}/{case}/{name}"
    ok = worst < 1e-16
    report(1, ok, f"worst squared relative term {worst:.3e} at {where} (bound 1e-16)")
    assert ok


# ---------------------------------------------------------------------------
# 2. autodiff fidelity


def _randomized(params, rng):
    # Glorot init leaves biases at zero, which parks dead ReLU layers exactly on a
    # kink where no derivative exists; random biases keep every check differentiable
    flat = params.flat()
    return params.with_flat(flat + rng.normal(scale=0.1, size=flat.size))


def test_criterion_2_autodiff_fd():
    rng = np.random.default_rng(2)
    worst = {"grad": 0.0, "hess": 0.0, "param": 0.0}
    ad.DIAGNOSTICS["relu_at_zero"] = 0
    for kind in ad.ACTIVATIONS:
        params = _randomized(init_params(3, 10, kind, seed=int(rng.integers(1 << 30))), rng)
        for x in rng.uniform(-1, 1, size=(4, 4)):
            jet = forward_jet(params, x)
            g = central_diff(lambda p: forward_jet(params, p).value, x, 1e-5)
            worst["grad"] = max(worst["grad"], rel_err(jet.grad, g))
            if kind != "relu":
                H = second_diff(lambda p: float(forward_jet(params, p).value), x, 1e-3)
                worst["hess"] = max(worst["hess"], rel_err(jet.hess, H))
            else:
                assert not jet.hess.any()
    cs = geometry.sample_box(grid=(2, 2, 2), time=geometry.TimeGrid(0, 1, 1.0), bc_assignment={"x3+": "neumann"})
    inputs = physics.prepare_loss_inputs(cs, mms.ProblemData.for_case("case1"))
    obj = Objective(inputs)
    for kind in ad.ACTIVATIONS:
        model = small_model(cs, inputs, activation=kind, seed=int(rng.integers(1 << 30)))
        base = model.flat() + rng.normal(scale=0.1, size=model.flat().size)
        grad = obj.evaluate(model.with_flat(base)).grad
        fd = central_diff(lambda v: float(obj.losses(model.with_flat(v)).sum()), base, 1e-5)
        worst["param"] = max(worst["param"], rel_err(grad, fd))
    kinks = ad.DIAGNOSTICS["relu_at_zero"]
    ok = worst["grad"] < 1e-5 and worst["hess"] < 1e-3 and worst["param"] < 1e-5 and kinks == 0
    report(2, ok, "gradient {grad:.2e} (1e-5), Hessian {hess:.2e} (1e-3), parameters {param:.2e} (1e-5)"
           .format(**worst) + f", ReLU kink hits {kinks}")
    assert ok


# ---------------------------------------------------------------------------
# training runs shared by criteria 3, 6 and 8

def _run(cfg):
    res = training.train(cfg)
    rep = training.evaluate(res.model, cfg, res.colloc, res.problem)
    return res, rep


def _max_err(rep, names):
    return max(rep.get(q) for q in names)


@pytest.fixture(scope="module")
def cube_runs():
    runs = {}
    for seed in (0, 1, 2):
        cfg = config.load_config("cube", [f"seed={seed}"])
        res, rep = _run(cfg)
        runs[seed] = (res, rep)
        if _max_err(rep, STRESS) <= 5e-4 and _max_err(rep, FLUX) <= 2e-2:
            break
    return runs


def test_criterion_3_cube(cube_runs):
    rows, ok = [], False
    for seed, (_, rep) in cube_runs.items():
        s, f = _max_err(rep, STRESS), _max_err(rep, FLUX)
        rows.append(f"seed {seed}: stress {s:.3e} flux {f:.3e}")
        ok |= s <= 5e-4 and f <= 2e-2
    report(3, ok, "; ".join(rows) + " (bounds 5e-4 / 2e-2)")
    assert ok


def test_criterion_6_balancing_identities(cube_runs):
    res, _ = cube_runs[0]
    events = res.record.events
    bad = [(e.iteration, balancing.check_identities(e, rtol=1e-12)) for e in events]
    bad = [b for b in bad if b[1]]
    view = res.record.deterministic_view()
    its = [e.iteration for e in events]
    cadence = its == list(range(0, res.config.iterations, 20))
    # weights in force at each step only change on balancing iterations
    current, changes = np.ones(physics.N_TERMS), []
    ev_iter = iter(events)
    nxt = next(ev_iter, None)
    for k in res.record.iterations:
        if nxt is not None and nxt.iteration == k:
            if not np.array_equal(nxt.weights, current):
                changes.append(k)
            current, nxt = nxt.weights, next(ev_iter, None)
    off_cadence = [k for k in changes if k % 20]
    ok = not bad and cadence and not off_cadence and len(view["weights"]) == len(events)
    report(6, ok, f"{len(events)} balancing events, identity failures {bad[:3]}, off-cadence changes "
                  f"{off_cadence[:3]}")
    assert ok


def test_criterion_8_determinism(cube_runs):
    seed = next(iter(cube_runs))
    first_res, first = cube_runs[seed]
    again_res, again = _run(config.load_config("cube", [f"seed={seed}"]))
    same_table = first.rows == again.rows
    same_points = all(np.array_equal(first.pointwise[key][0], again.pointwise[key][0]) for key in first.pointwise)
    a, b = first_res.record.deterministic_view(), again_res.record.deterministic_view()
    same_log = all(np.array_equal(a[k], b[k]) for k in a)
    ok = same_table and same_points and same_log
    report(8, ok, f"seed {seed}: error table identical={same_table}, pointwise identical={same_points}, "
                  f"training log identical={same_log}")
    assert ok


# ---------------------------------------------------------------------------
# 4 and 5: coating sweeps


def test_criterion_4_coating_ratios():
    errs, finite = {}, True
    for ratio in (10.0, 1e3, 1e6, 1e9):
        res, rep = _run(config.load_config("coating", [f"size_ratio={ratio}"]))
        finite &= bool(np.isfinite(res.record.totals).all())
        errs[ratio] = _max_err(rep, STRESS)
    spread = max(errs.values()) / min(errs.values())
    ok = finite and all(e < 1e-2 for e in errs.values()) and spread < 100
    detail = ", ".join(f"{r:g}: {e:.3e}" for r, e in errs.items())
    report(4, ok, f"stress errors {detail}; worst/best {spread:.2f} (bounds 1e-2, 100)")
    assert ok


def test_criterion_5_activations():
    errs, finite = {}, True
    for act in ("sigmoid", "tanh", "swish", "softplus", "arctan", "mish"):
        res, rep = _run(config.load_config("coating", ["size_ratio=1e5", f"activation={act}"]))
        finite &= bool(np.isfinite(res.record.totals).all())
        errs[act] = _max_err(rep, STRESS)
    ok = finite and all(e <= 1e-2 for e in errs.values())
    report(5, ok, "stress errors " + ", ".join(f"{a}: {e:.3e}" for a, e in errs.items()) + " (bound 1e-2)")
    assert ok


# ---------------------------------------------------------------------------
# 7. metric examples


def _global_error_oracle(exact, numerical) -> float:
    """The global error of float inputs evaluated in 60-digit decimal, then rounded once."""
    with localcontext() as ctx:
        ctx.prec = 60
        e = [Decimal(float(v)) for v in exact]
        n = [Decimal(float(v)) for v in numerical]
        num = sum((a - b) ** 2 for a, b in zip(e, n)).sqrt()
        return float(num / sum(a * a for a in e).sqrt())


def test_criterion_7_metrics():
    checks = {}
    checks["relative (2, 2)"] = mms.relative_error(2, 2) == (0.0, False)
    checks["relative (100, 101)"] = mms.relative_error(100, 101) == (0.01, False)
    checks["relative (0, 0.1) flagged"] = mms.relative_error(0, 0.1) == (0.1, True)
    x = np.random.default_rng(7).normal(size=64)
    checks["global identical"] = mms.global_error(x, x) == 0.0
    checks["global (3,4)/(3,0)"] = mms.global_error([3.0, 4.0], [3.0, 0.0]) == 0.8
    # 1.01 has no binary representation: the exact answer for the float inputs
    # is 0.01 plus the representation error of 1.01
    checks["global 1.01 scalar"] = mms.global_error([1.0], [1.01]) == _global_error_oracle([1.0], [1.01])
    one = mms.global_error(x, 1.01 * x)
    checks["global 1.01 vector"] = abs(one - _global_error_oracle(x, 1.01 * x)) <= 4 * np.spacing(0.01)
    checks["global 1.01 ~ 0.01"] = abs(one - 0.01) <= 1e-15
    checks["scale-aware 2^30"] = mms.global_error(2.0 ** 30 * x, 2.0 ** 30 * (x + 1)) == mms.global_error(x, x + 1)
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report(7, ok, f"{sum(checks.values())}/{len(checks)} metric examples hold; failed {failed}")
    assert ok
