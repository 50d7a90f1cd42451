"""Higher-order regularized steps for monotone operators.

The basic move: given an anchor z_bar, build the (q-1)st Taylor model of
the operator F, add the regularizer (M/q!)||z - z_bar||^{q-1} (z - z_bar),
and solve the resulting variational inequality over the feasible set.  For
q = 1 this is a plain projected step; for q = 2 an implicit step through
the Jacobian, solved by a scalar bisection in the interior case and by
projected extragradient on the (strongly monotone) model otherwise.

Applied to a gradient field, the same step is an inexact proximal-point
oracle: the returned point z and the leftover model force u in the normal
cone satisfy

    || grad h(z) + u + lam (z - z_bar) || <= (lam/2) ||z - z_bar|| + delta

with lam = gamma ||z - z_bar||^{q-1}, gamma = M/q!, and delta accounting
only for the inner-solve slack.  With M = 2 Lp the Taylor remainder is at
most (Lp/q!) s^q = (lam/2) s, so the inequality is tight but exact.  (For
q = 2 that gamma is exactly Lp; for q = 1 it is 2 Lp -- the gradient-step
case genuinely needs the larger constant: a flat direction of a convex
quadratic violates the inequality with gamma = Lp.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain

# interior margin at which the q=2 bisection solution is trusted without
# running the constrained VI subsolver
_INTERIOR_MARGIN = 1e-6
_LAMBDA_FLOOR = 1e-12


@dataclass
class TensorStepConfig:
    order: int = 1            # q, the step order (1 or 2)
    M: float = 1.0            # regularization strength
    vi_tol: float = 1e-10     # relative tangent-residual target for the model VI
    max_inner_iters: int = 10_000
    bisection_tol: float = 1e-12

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"step order must be 1 or 2, got {self.order}")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not (self.vi_tol > 0 and self.bisection_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class ProxCertificate:
    """Outcome of one inexact proximal step on a function h.

    residual is the measured norm ||grad h(z) + u + lam (z - z_bar)||,
    bound the target (lam/2)||z - z_bar|| + delta.  ok records whether the
    certificate holds; callers treat a failed certificate as a diagnostic,
    not an exception.
    """

    z: np.ndarray
    u: np.ndarray
    lam: float
    residual: float
    bound: float
    delta: float = 0.0
    ok: bool = True
    inner_iters: int = 0


def taylor_operator(op, z_bar, z, q: int):
    """(q-1)st-order Taylor approximation of the operator at z_bar."""
    z_bar = np.asarray(z_bar, float)
    z = np.asarray(z, float)
    if q == 1:
        return np.asarray(op(z_bar), float)
    if q == 2:
        return np.asarray(op(z_bar), float) + op.jacobian(z_bar) @ (z - z_bar)
    raise ValueError(f"taylor order {q} not supported")


def model_operator(op, z_bar, cfg: TensorStepConfig):
    """The regularized Taylor model G(z) whose VI the tensor step solves."""
    z_bar = np.asarray(z_bar, float)
    q = cfg.order
    scale = cfg.M / math.factorial(q)

    def G(z):
        z = np.asarray(z, float)
        s = z - z_bar
        return (taylor_operator(op, z_bar, z, q)
                + scale * np.linalg.norm(s) ** (q - 1) * s)

    return G


def _bisection_q2(F0, J, M, tol, max_iters):
    """Solve lam = (M/2)||s(lam)|| with s(lam) = -(J + lam I)^{-1} F0.

    For monotone J the map lam -> (M/2)||s(lam)|| is nonincreasing, so the
    fixed point is unique; we bracket it and bisect.  Returns (s, lam).
    """
    n = F0.shape[0]
    eye = np.eye(n)

    def s_of(lam):
        return -np.linalg.solve(J + lam * eye, F0)

    def target(lam):
        return 0.5 * M * np.linalg.norm(s_of(lam))

    lo = _LAMBDA_FLOOR
    t_lo = target(lo)
    if t_lo <= lo:
        lam = max(t_lo, _LAMBDA_FLOOR)
        return s_of(lam), lam
    hi = max(t_lo, 2 * lo)
    for _ in range(200):
        if target(hi) <= hi:
            break
        hi *= 4.0
    else:  # pragma: no cover - target(hi) <= (M/2)||F0||/hi always crosses
        raise RuntimeError("failed to bracket the q=2 step size")
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        if target(mid) > mid:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    lam = 0.5 * (lo + hi)
    s = s_of(lam)
    # one fixed-point polish: re-solve at the lambda the final s implies
    lam = max(0.5 * M * np.linalg.norm(s), _LAMBDA_FLOOR)
    return s_of(lam), lam


def _model_vi_subsolve(G, domain: Domain, z_start, lipschitz_est, tol, cfg):
    """Projected extragradient on the model VI, warm-started at z_start.

    The model is strongly monotone (M > Lp), so plain EG with a constant
    step converges linearly; the tangent residual is only measured every
    16 iterations since it costs an extra oracle-free projection.
    """
    eta = 1.0 / max(lipschitz_est, 1e-12)
    z = domain.project(np.asarray(z_start, float))
    best = z
    best_r = last_r = math.inf
    iters = 0
    for it in range(cfg.max_inner_iters):
        w = domain.project(z - eta * G(z))
        z = domain.project(z - eta * G(w))
        iters = it + 1
        if iters % 16 == 0 or iters == cfg.max_inner_iters:
            r = domain.tangent_residual(z, G(z))
            if r < best_r:
                best_r, best = r, z
            if r <= tol:
                return z, r, iters, True
            if r > 4.0 * last_r:  # diverging: step was too optimistic
                eta *= 0.5
                z = best
            last_r = r
    r = domain.tangent_residual(z, G(z))
    if r < best_r:
        best_r, best = r, z
    return best, best_r, iters, best_r <= tol


def _solve_model(op, domain: Domain, z_bar, cfg: TensorStepConfig):
    """Solve the tensor-step VI; returns (z, vi_slack, inner_iters, ok)."""
    z_bar = np.asarray(z_bar, float)
    F0 = np.asarray(op(z_bar), float)
    tol = cfg.vi_tol * (1.0 + np.linalg.norm(F0))

    if cfg.order == 1:
        z = domain.project(z_bar - F0 / cfg.M)
        # projection solves the model VI exactly
        return z, 0.0, 0, True

    J = op.jacobian(z_bar)
    s, _lam = _bisection_q2(F0, J, cfg.M, cfg.bisection_tol,
                            cfg.max_inner_iters)
    cand = z_bar + s
    G = model_operator(op, z_bar, cfg)
    if domain.interior_margin(cand) >= _INTERIOR_MARGIN:
        slack = float(np.linalg.norm(G(cand)))
        if slack <= tol:
            return cand, slack, 0, True
    # constrained (or the bisection left too much slack): solve the VI.
    # iterates stay feasible, so the model is Lipschitz with the domain-wide
    # bound below (the ||s||^{q-1} s regularizer has local constant 1.5 M r)
    reach = min(domain.diameter(), 10.0 * (np.linalg.norm(s) + 1.0))
    lip = float(np.linalg.norm(J, 2)) + 1.5 * cfg.M * reach
    start = domain.project(cand)
    z, r, iters, ok = _model_vi_subsolve(G, domain, start, lip, tol, cfg)
    return z, r, iters, ok


def tensor_step(op, domain: Domain, z_bar, cfg: TensorStepConfig):
    """The order-q regularized step from z_bar; returns the new point."""
    z, _, _, _ = _solve_model(op, domain, z_bar, cfg)
    return z


def certified_gamma(q: int, Lp: float) -> float:
    """The proximal-oracle gamma that an M = 2 Lp tensor step certifies."""
    return 2.0 * Lp / math.factorial(q)


def iprox_via_tensor(h_grad, domain: Domain, z_bar, gamma: float,
                     cfg: TensorStepConfig) -> ProxCertificate:
    """One inexact proximal step on a function via its gradient field.

    h_grad is the gradient operator (callable, with .jacobian for q = 2);
    a FunctionOracle is also accepted and unwrapped.  gamma sets the
    certificate's lam = gamma ||z - z_bar||^{q-1}; the step itself is
    governed by cfg.M.  gamma = M/q! makes the certificate exact when
    M >= 2 Lp (use certified_gamma).
    """
    if hasattr(h_grad, "grad_operator"):
        h_grad = h_grad.grad_operator()
    z_bar = np.asarray(z_bar, float)
    F0 = np.asarray(h_grad(z_bar), float)
    z, _slack, iters, _ok = _solve_model(h_grad, domain, z_bar, cfg)
    s = z - z_bar
    snorm = float(np.linalg.norm(s))
    q = cfg.order

    # leftover model force; its tangential part is inner-solve noise, the
    # normal part is the certified u
    G = model_operator(h_grad, z_bar, cfg)
    u = -np.asarray(G(z), float)
    u = u - domain.project_tangent(z, u)

    lam = float(gamma) * snorm ** (q - 1)
    residual = float(np.linalg.norm(
        np.asarray(h_grad(z), float) + u + lam * s))
    delta = cfg.vi_tol * (1.0 + np.linalg.norm(F0)) * 2.0
    bound = 0.5 * lam * snorm + delta
    return ProxCertificate(z=z, u=u, lam=lam, residual=residual, bound=bound,
                           delta=delta, ok=residual <= bound,
                           inner_iters=iters)
