import math

import numpy as np
import pytest
from scipy.optimize import minimize

from saddleopt.aipe import (
    OracleBundle, aipe_epoch, aipe_restart, estimate_initial_gap,
    gap_from_residual, optms_restart, solve_a,
)
from saddleopt.geometry import Box
from saddleopt.problems import FunctionOracle
from saddleopt.tensor_step import TensorStepConfig, iprox_via_tensor


def exact_bundle(h: FunctionOracle, domain, M, order):
    cfg = TensorStepConfig(order=order, M=M)

    def iprox(zb, g, d):
        c = iprox_via_tensor(h, domain, zb, g, cfg)
        return c.z, c.u, c

    return OracleBundle(ifunc=lambda z, d: h.value(z),
                        igrad=lambda z, d: h.grad(z),
                        iprox=iprox, order=order)


def quad_oracle(c, lo=-10.0, hi=10.0):
    c = np.atleast_1d(np.asarray(c, float))
    dim = c.size
    return FunctionOracle(
        domain=Box([lo] * dim, [hi] * dim),
        value=lambda z: 0.5 * np.sum((z - c) ** 2),
        grad=lambda z: np.asarray(z, float) - c,
        hess=lambda z: np.eye(dim), p=1, Lp=1.0, mu=1.0)


def quartic_oracle(dim=3, seed=0):
    """h = ||z||^4/4 + z'Pz/2 + b'z on [-1,1]^dim, P psd."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim))
    P = A @ A.T / dim
    b = rng.normal(scale=0.5, size=dim)

    def val(z):
        return 0.25 * np.linalg.norm(z) ** 4 + 0.5 * z @ P @ z + b @ z

    def grad(z):
        return np.linalg.norm(z) ** 2 * z + P @ z + b

    def hess(z):
        n2 = np.linalg.norm(z) ** 2
        return n2 * np.eye(dim) + 2 * np.outer(z, z) + P

    # L2 on the unit box: third derivative of the quartic term
    L2 = 6 * math.sqrt(dim) + 6.0
    return FunctionOracle(domain=Box([-1.0] * dim, [1.0] * dim), value=val,
                          grad=grad, hess=hess, p=2, Lp=L2, mu=0.25)


def reference_min(h: FunctionOracle):
    box = h.domain
    best = None
    for s in range(5):
        z0 = box.sample(np.random.default_rng(s))
        res = minimize(h.value, z0, jac=h.grad, method="L-BFGS-B",
                       bounds=list(zip(box.lo, box.hi)),
                       options={"ftol": 1e-16, "gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    return best.x, best.fun


# ---------------------------------------------------------------------------
# the stepsize recursion
# ---------------------------------------------------------------------------

def test_solve_a_examples():
    a, A = solve_a(0.0, 1.0)
    assert (a, A) == (0.5, 0.5)
    a, _ = solve_a(0.5, 0.5)
    assert a == pytest.approx((1 + math.sqrt(3)) / 2)
    with pytest.raises(ValueError):
        solve_a(1.0, 0.0)


def test_solve_a_identity_property():
    rng = np.random.default_rng(1)
    for _ in range(200):
        A = rng.uniform(0, 100)
        lp = rng.uniform(1e-6, 100)
        a, A_new = solve_a(A, lp)
        assert A + a == pytest.approx(2 * lp * a ** 2, rel=1e-12)
        assert A_new == A + a


# ---------------------------------------------------------------------------
# one epoch
# ---------------------------------------------------------------------------

def test_epoch_hand_trace_scalar():
    h = quad_oracle([0.0])
    bundle = exact_bundle(h, h.domain, M=2.0, order=1)
    z, st = aipe_epoch(bundle, h.domain, [1.0], gamma=1.0, delta=0.0, T=1,
                       q=1)
    # one prox step from z_bar = z0 = 1 lands at 0.5; h(0.5) = 0.125
    assert st.h_tilde[-1] == pytest.approx(0.125)
    assert h.value(z) == pytest.approx(0.125)


def test_epoch_records_exact_values_and_invariants():
    h = quad_oracle([0.3, -0.2, 0.1], lo=-2.0, hi=2.0)
    bundle = exact_bundle(h, h.domain, M=2.0, order=1)
    z, st = aipe_epoch(bundle, h.domain, [1.5, -1.5, 0.0], gamma=2.0,
                       delta=0.0, T=12, q=1, stall_patience=None)
    # A monotone increasing, lambda' halves or doubles each iteration
    assert all(b >= a for a, b in zip(st.A, st.A[1:]))
    for lp_prev, lp_next in zip(st.lam_prime, st.lam_prime[1:]):
        assert lp_next in (pytest.approx(0.5 * lp_prev),
                           pytest.approx(2.0 * lp_prev))
    assert all(0 < g <= 1 for g in st.gamma_t)
    # recorded values are the exact function values at replayed points
    assert len(st.h_hat) == len(st.h_tilde) == 13
    assert h.domain.contains(z)


def test_epoch_fixed_point_event():
    # start at the unconstrained minimizer: the first prox step returns it
    h = quad_oracle([0.25, -0.5], lo=-1.0, hi=1.0)
    bundle = exact_bundle(h, h.domain, M=2.0, order=1)
    z, st = aipe_epoch(bundle, h.domain, [0.25, -0.5], gamma=1.0, delta=0.0,
                       T=10, q=1)
    assert st.fixed_point
    assert np.allclose(z, [0.25, -0.5])
    assert bundle.nprox == 1


def test_epoch_counts_iprox_calls():
    h = quad_oracle([0.0, 0.0], lo=-3.0, hi=3.0)
    bundle = exact_bundle(h, h.domain, M=2.0, order=1)
    aipe_epoch(bundle, h.domain, [2.0, -1.0], gamma=1.0, delta=0.0, T=7,
               q=1, stall_patience=None)
    assert bundle.nprox == 7


# ---------------------------------------------------------------------------
# restarts
# ---------------------------------------------------------------------------

def test_restart_s0_returns_start():
    h = quad_oracle([0.0])
    bundle = exact_bundle(h, h.domain, M=2.0, order=1)
    z, info = aipe_restart(bundle, h.domain, [1.0], 1.0, 0.0, T=5, S=0)
    assert np.allclose(z, [1.0])
    assert info["traces"] == []


def test_restart_gap_halving_quartic():
    h = quartic_oracle(dim=3, seed=2)
    z_star, f_star = reference_min(h)
    bundle = exact_bundle(h, h.domain, M=2 * h.Lp, order=2)

    def gap(z):
        return h.value(z) - f_star

    T = math.ceil(8.0 * (h.Lp / h.mu) ** (2.0 / 7.0))
    z, info = aipe_restart(bundle, h.domain, h.domain.sample(
        np.random.default_rng(3)), gamma=h.Lp, delta=0.0, T=T, S=8,
        gap_oracle=gap)
    gaps = info["gaps"]
    for g0, g1 in zip(gaps, gaps[1:]):
        if g0 < 1e-12:
            break
        assert g1 <= 0.75 * g0 + 1e-12


# ---------------------------------------------------------------------------
# exact-oracle wrapper
# ---------------------------------------------------------------------------

def test_optms_quadratic_converges_to_projection():
    c = np.array([2.5, -4.0, 0.3])
    h = quad_oracle(c, lo=-1.0, hi=1.0)
    z = optms_restart(h, h.domain, np.zeros(3), eps=1e-8)
    target = np.clip(c, -1.0, 1.0)
    assert h.value(z) - h.value(target) <= 1e-8


def test_optms_large_eps_single_epoch():
    h = quad_oracle([0.2], lo=-1.0, hi=1.0)
    z = optms_restart(h, h.domain, [0.9], eps=100.0)
    assert h.domain.contains(z)


def test_optms_quartic_certified():
    h = quartic_oracle(dim=2, seed=5)
    z_star, f_star = reference_min(h)
    z = optms_restart(h, h.domain, h.domain.center(), eps=1e-7)
    assert h.value(z) - f_star <= 1e-7 + 1e-10


def test_gap_from_residual():
    # p=1 strongly convex (mu=1): gap <= r^2/2
    assert gap_from_residual(0.2, 1.0, 1) == pytest.approx(0.02)
    assert gap_from_residual(0.0, 1.0, 2) == 0.0
    assert gap_from_residual(1.0, 0.0, 1) == math.inf


def test_estimate_initial_gap_upper_bounds():
    h = quad_oracle([0.0, 0.0], lo=-1.0, hi=1.0)
    est = estimate_initial_gap(h.value, h.domain, np.array([1.0, 1.0]))
    assert est >= h.value(np.array([1.0, 1.0])) - 0.0  # true gap is h(z0)
