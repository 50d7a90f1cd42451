import math

import numpy as np
import pytest

from saddleopt.geometry import Box
from saddleopt.minimax import (
    CountTracker, MinimaxConfig, baseline_eg_solve, derive_parameters,
    ifunc_igrad_primal, iprox_phi, solve,
)
from saddleopt.problems import (
    SaddleProblem, join, make_bilinear, make_power, make_quadratic,
    regularize_f_eps, split, surrogate_g,
)
from saddleopt.tensor_step import TensorStepConfig, tensor_step


def unit_square_problem():
    """f = x*y on [0,1]^2: Dx = Dy = 1 for parameter-formula checks."""
    box = Box([0.0], [1.0])
    return SaddleProblem(box, box, 1,
                         value=lambda z: z[0] * z[1],
                         grad=lambda z: np.array([z[1], z[0]]),
                         L1=1.0, Lp=1.0, name="xy-unit")


def danskin_problem(dim=3, seed=0, mu=0.05):
    """f = x'Ay + b'x - ||y||^2/2 on boxes wide enough that the inner
    maximizer stays interior; with the y-regularizer mu at y0 = 0 the
    envelope has the closed form Phi(x) = ||A'x||^2/(2(1+mu)) + b'x."""
    rng = np.random.default_rng(seed)
    A = rng.normal(scale=0.4, size=(dim, dim))
    b = rng.normal(scale=0.2, size=dim)
    xdom = Box(-np.ones(dim), np.ones(dim))
    ydom = Box(-5 * np.ones(dim), 5 * np.ones(dim))

    def value(z):
        x, y = split(z, dim)
        return float(x @ A @ y + b @ x - 0.5 * y @ y)

    def grad(z):
        x, y = split(z, dim)
        return join(A @ y + b, A.T @ x - y)

    L1 = float(np.linalg.norm(A, 2)) + 1.0
    prob = SaddleProblem(xdom, ydom, 1, value, grad, L1=L1, Lp=L1,
                         name="danskin")
    f_eps = regularize_f_eps(prob, prob.domain.center(), mu, mu)
    scale = 1.0 / (1.0 + mu)

    def phi(x):
        w = A.T @ x
        return 0.5 * scale * w @ w + b @ x + 0.5 * mu * np.sum((x - 0.0) ** 2)

    def phi_grad(x):
        return scale * (A @ (A.T @ x)) + b + mu * x

    return prob, f_eps, phi, phi_grad, A


def reference_saddle_g(g_eps, iters=300_000):
    op = g_eps.operator()
    dom = g_eps.domain
    eta = 0.2 / g_eps.L1
    z = dom.center()
    for _ in range(iters):
        w = dom.project(z - eta * op(z))
        z_new = dom.project(z - eta * op(w))
        if np.linalg.norm(z_new - z) < 1e-15:
            return z_new
        z = z_new
    return z


# ---------------------------------------------------------------------------
# parameter derivation
# ---------------------------------------------------------------------------

def test_parameters_unit_square_frozen_values():
    prob = unit_square_problem()
    cfg = derive_parameters(prob, 0.04)
    # mu = eps / (4 D^p) with D = 1
    assert cfg.mu_x == pytest.approx(0.01)
    assert cfg.mu_y == pytest.approx(0.01)
    # Lp dominates the eps/D^p floor, so gamma echoes Lp
    assert cfg.gamma == pytest.approx(1.0)
    # p=1 polish constant: L1 + max regularizer strength
    assert cfg.L1_tilde == pytest.approx(1.0 + 0.01)
    assert cfg.zeta1 == pytest.approx(0.04 / (24.0 * 1.01))
    assert cfg.zeta2 == pytest.approx(cfg.zeta1 / 4.0)


def test_parameters_gamma_floor_for_degenerate_lp():
    box = Box([0.0], [1.0])
    prob = SaddleProblem(box, box, 1,
                         value=lambda z: 0.0,
                         grad=lambda z: np.zeros(2),
                         L1=1.0, Lp=0.0, name="flat")
    cfg = derive_parameters(prob, 0.01)
    assert cfg.gamma == pytest.approx(0.01)  # eps / min(Dx, Dy)^p


def test_parameters_precision_precondition():
    prob = unit_square_problem()   # Lp = 1, min D^p = 1
    with pytest.raises(ValueError, match="precondition"):
        derive_parameters(prob, 2.0)
    cfg = derive_parameters(prob, 0.999)   # boundary side that is allowed
    assert cfg.eps == 0.999


def test_parameters_positive_and_validated():
    prob = make_quadratic(3, seed=0)
    cfg = derive_parameters(prob, 1e-3)
    for name in ("gamma", "mu_x", "mu_y", "delta1", "delta2", "zeta1",
                 "zeta2", "zeta3", "stall1", "stall2"):
        assert getattr(cfg, name) > 0
    assert cfg.T1 >= 1 and cfg.S1 >= 1
    with pytest.raises(ValueError):
        MinimaxConfig(**{**cfg.__dict__, "gamma": 0.0})


# ---------------------------------------------------------------------------
# oracle accounting
# ---------------------------------------------------------------------------

def test_count_tracker_nested_attribution():
    prob = make_quadratic(2, seed=3)
    tr = CountTracker(prob)
    z = prob.domain.center()

    def burn(n):
        for _ in range(n):
            prob.oracle_eval(z, 1)

    start = prob.oracle_counter
    with tr.level("outer"):
        burn(3)
        with tr.level("middle"):
            burn(5)
            with tr.level("inner"):
                burn(7)
            burn(2)
        with tr.level("polish"):
            burn(1)
        burn(4)
    assert tr.counts == {"outer": 7, "middle": 7, "inner": 7, "polish": 1}
    assert tr.total == prob.oracle_counter - start


def test_count_tracker_random_nesting_sums_exactly():
    rng = np.random.default_rng(0)
    prob = make_quadratic(2, seed=4)
    tr = CountTracker(prob)
    z = prob.domain.center()
    start = prob.oracle_counter
    levels = ["outer", "middle", "inner", "polish"]

    def run(depth):
        for _ in range(int(rng.integers(0, 4))):
            prob.oracle_eval(z, 0)
        if depth < 3:
            for _ in range(int(rng.integers(0, 3))):
                with tr.level(levels[int(rng.integers(0, 4))]):
                    run(depth + 1)

    with tr.level("outer"):
        run(0)
    assert tr.total == prob.oracle_counter - start


# ---------------------------------------------------------------------------
# envelope value/gradient oracle
# ---------------------------------------------------------------------------

def test_ifunc_igrad_matches_closed_form_danskin():
    prob, f_eps, phi, phi_grad, A = danskin_problem(dim=3, seed=1)
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = prob.x_domain.sample(rng)
        val, grad, y_hat = ifunc_igrad_primal(f_eps, x, 1e-9, f_eps.L1)
        assert val == pytest.approx(phi(x), abs=1e-6)
        assert np.linalg.norm(grad - phi_grad(x)) <= 1e-5
        # the returned maximizer matches A'x/(1+mu)
        assert np.linalg.norm(y_hat - A.T @ x / 1.05) <= 1e-5


def test_ifunc_warm_start_returns_same_point():
    prob, f_eps, phi, _, _ = danskin_problem(dim=2, seed=5)
    x = np.array([0.3, -0.4])
    v1, _, y1 = ifunc_igrad_primal(f_eps, x, 1e-10, f_eps.L1)
    v2, _, y2 = ifunc_igrad_primal(f_eps, x, 1e-10, f_eps.L1, warm=y1)
    assert np.allclose(y1, y2, atol=1e-8)
    assert v2 == pytest.approx(v1, abs=1e-9)


# ---------------------------------------------------------------------------
# the primal proximal oracle (middle loop)
# ---------------------------------------------------------------------------

def test_iprox_phi_tracks_surrogate_saddle():
    prob = make_bilinear(3, seed=1)
    cfg = derive_parameters(prob, 1e-3)
    f_eps = regularize_f_eps(prob, prob.domain.center(), cfg.mu_x, cfg.mu_y)
    x_bar = np.array([0.3, -0.2, 0.5])
    g_eps = surrogate_g(f_eps, x_bar, cfg.gamma)
    x_star, _ = split(reference_saddle_g(g_eps), prob.dx)
    x_t, u_t, cert = iprox_phi(f_eps, x_bar, cfg.gamma, cfg.delta1, cfg)
    assert np.linalg.norm(x_t - x_star) <= 1e-3
    assert prob.x_domain.contains(x_t)
    # u lies in the normal cone: nonpositive against feasible directions
    rng = np.random.default_rng(3)
    for _ in range(10):
        xp = prob.x_domain.sample(rng)
        assert u_t @ (xp - x_t) <= 1e-8 * max(1.0, np.linalg.norm(u_t))


def test_iprox_phi_certificate_battery():
    for seed in range(6):
        prob = make_quadratic(2, seed=seed)
        cfg = derive_parameters(prob, 0.05)
        f_eps = regularize_f_eps(prob, prob.domain.center(),
                                 cfg.mu_x, cfg.mu_y)
        rng = np.random.default_rng(100 + seed)
        x_bar = prob.x_domain.sample(rng)
        x_t, u_t, cert = iprox_phi(f_eps, x_bar, cfg.gamma, cfg.delta1, cfg)
        assert cert.ok, (seed, cert.residual, cert.bound)
        assert cert.residual <= cert.bound


# ---------------------------------------------------------------------------
# full solve
# ---------------------------------------------------------------------------

def test_solve_bilinear_reaches_target():
    prob = make_bilinear(3, seed=1)
    z, rep = solve(prob, 1e-3)
    assert rep.ok
    assert rep.residual <= 1e-3
    assert prob.domain.contains(z)
    # independent residual measurement at the returned point
    op = prob.operator()
    assert prob.domain.tangent_residual(z, op(z)) == pytest.approx(
        rep.residual, rel=1e-9)


def test_solve_quadratic_and_power():
    for maker, kw in [(make_quadratic, {}), (make_power, {"p": 2})]:
        prob = maker(3, seed=1, **kw)
        z, rep = solve(prob, 1e-3)
        assert rep.ok and rep.residual <= 1e-3
        assert not rep.flags


def test_solve_accounting_identity():
    prob = make_quadratic(3, seed=2)
    start = prob.oracle_counter
    z, rep = solve(prob, 1e-2)
    assert sum(rep.counts.values()) == prob.oracle_counter - start
    assert set(rep.counts) == {"outer", "middle", "inner", "polish"}
    assert all(v >= 0 for v in rep.counts.values())
    # trace call counts are cumulative and end at the total
    calls = [row[0] for row in rep.trace]
    assert calls == sorted(calls)
    assert calls[-1] <= sum(rep.counts.values())


def test_solve_known_saddle_is_detected_fast():
    # the power game's saddle sits at the domain center = starting point
    prob = make_power(3, p=2, seed=0)
    z, rep = solve(prob, 1e-3)
    assert rep.residual <= 1e-12
    assert np.linalg.norm(z - prob.known_saddle) <= 1e-9


def test_solve_determinism():
    reports = []
    for _ in range(2):
        prob = make_quadratic(3, seed=7)
        z, rep = solve(prob, 1e-2)
        reports.append((z.tobytes(), rep.residual, tuple(rep.trace[-1][:2]),
                        tuple(sorted(rep.counts.items()))))
    assert reports[0] == reports[1]


def test_solve_report_json_roundtrip():
    import json
    prob = make_quadratic(2, seed=8)
    z, rep = solve(prob, 1e-2)
    blob = json.loads(rep.to_json())
    assert blob["residual"] == rep.residual
    assert blob["total_oracle_calls"] == sum(rep.counts.values())
    assert np.allclose(blob["z"], z)
    assert blob["ok"] is True


def test_solve_paper_mode_fixed_point():
    # paper mode with worst-case loop counts is only affordable when the
    # start is already the saddle: the first proximal step is a fixed point
    prob = make_power(2, p=2, seed=0)
    cfg = derive_parameters(prob, 1e-2, practical_mode=False)
    z, rep = solve(prob, 1e-2, cfg)
    assert rep.residual <= 1e-2


# ---------------------------------------------------------------------------
# baseline extragradient
# ---------------------------------------------------------------------------

def test_baseline_matches_hand_rolled_eg():
    # replay the exact update rule and compare trajectories bitwise-close
    prob_a = make_quadratic(3, seed=9)
    prob_b = make_quadratic(3, seed=9)
    eps = 1e-6
    z_a, rep = baseline_eg_solve(prob_a, eps)

    op = prob_b.operator()
    dom = prob_b.domain
    M = 2.0 * max(prob_b.Lp, eps)
    cfg = TensorStepConfig(order=1, M=M)
    z = dom.center()
    best_z, best_r = z, math.inf
    for _ in range(10_000_000):
        zh = tensor_step(op, dom, z, cfg)
        Fh = np.asarray(op(zh), float)
        r = float(np.linalg.norm(dom.project_tangent(zh, -Fh)))
        if r < best_r:
            best_z, best_r = zh, r
        if r <= eps:
            break
        z = dom.project(z - (1.0 / M) * Fh)
    assert np.array_equal(z_a, best_z)
    assert rep.residual == best_r


def test_baseline_budget_flag():
    prob = make_bilinear(3, seed=0)
    z, rep = baseline_eg_solve(prob, 1e-12, max_oracle_calls=200)
    assert not rep.ok
    assert any("budget" in f for f in rep.flags)


def test_baseline_quadratic_converges():
    prob = make_quadratic(3, seed=4)
    z, rep = baseline_eg_solve(prob, 1e-5)
    assert rep.ok and rep.residual <= 1e-5
    op = prob.operator()
    assert prob.domain.tangent_residual(z, op(z)) <= 1e-5


def test_baseline_p2_zero_step_at_saddle():
    prob = make_power(2, p=2, seed=0)   # saddle at the center start
    z, rep = baseline_eg_solve(prob, 1e-8, q=2)
    assert rep.residual <= 1e-8
    assert np.linalg.norm(z - prob.known_saddle) <= 1e-6


# ---------------------------------------------------------------------------
# oracle-count scaling sanity
# ---------------------------------------------------------------------------

def test_tighter_eps_costs_no_fewer_calls():
    costs = []
    for eps in (3e-2, 3e-3):
        prob = make_quadratic(3, seed=11)
        _, rep = solve(prob, eps)
        assert rep.ok
        costs.append(sum(rep.counts.values()))
    assert costs[1] >= costs[0]
