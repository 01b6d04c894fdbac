"""Stabilizing ARE solutions, observer gain design, and Hurwitz testing.

Two continuous AREs are used downstream:

  scheduled:  AᵀP + PA - PBBᵀP + ρP = 0,   ρ ∈ (0,1]
  lowgain:    AᵀP + PA - PBBᵀP + εI = 0,   ε ∈ (0,1]

The scheduled equation reduces exactly to a zero-state-weight standard ARE
for the shifted matrix A + (ρ/2)I.  Both are solved by the Hamiltonian
stable-invariant-subspace (Schur) method followed by Newton (Kleinman)
refinement; a continuation fallback from a larger parameter covers the rare
cases where the subspace extraction degrades.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import AgentModel, check_assumption

HURWITZ_TOL = 1e-9
PSD_TOL = 1e-8
NEWTON_MAX_ITER = 20


class RiccatiError(RuntimeError):
    pass


class ParameterError(ValueError):
    pass


def is_hurwitz(M) -> bool:
    """True iff every eigenvalue of M has real part < -1e-9."""
    M = np.asarray(M, dtype=float)
    return bool(np.linalg.eigvals(M).real.max() < -HURWITZ_TOL)


def residual_tolerance(P: np.ndarray) -> float:
    """Acceptable ARE residual: 1e-9·(1 + ‖P‖²)."""
    return 1e-9 * (1.0 + np.linalg.norm(P, 2) ** 2)


@dataclass(frozen=True)
class RiccatiSolution:
    """Stabilizing solution of one of the two AREs, with certificates."""

    P: np.ndarray
    kind: str  # "scheduled" or "lowgain"
    parameter: float  # ρ or ε
    residual_norm: float
    closed_loop_stable: bool


@dataclass(frozen=True)
class ObserverGain:
    """Output-injection gain K with A - KC Hurwitz."""

    K: np.ndarray


def _sym(P):
    return (P + P.T) / 2


def _care_schur(A, G, Q):
    """Stabilizing solution of AᵀP + PA - PGP + Q = 0 via Hamiltonian Schur."""
    n = A.shape[0]
    H = np.block([[A, -G], [-Q, -A.T]])
    _, Z, sdim = sla.schur(H, sort=lambda x: x.real < 0.0)
    if sdim != n:
        raise RiccatiError(
            f"stable invariant subspace has dimension {sdim}, expected {n}"
        )
    U1 = Z[:n, :n]
    U2 = Z[n:, :n]
    cond = np.linalg.cond(U1)
    if not np.isfinite(cond) or cond > 1e13:
        raise RiccatiError(f"subspace extraction ill-conditioned (cond={cond:.2e})")
    return _sym(np.linalg.solve(U1.T, U2.T).T)


def _newton_refine(A, G, Q, P):
    """Kleinman iteration from a stabilizing iterate.

    The residual is not monotone from a far initializer, so iteration stops
    on convergence or step stagnation, and the best-residual iterate wins.
    """
    current = P
    best = P
    best_res = np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q, 2)
    for _ in range(NEWTON_MAX_ITER):
        Acl = A - G @ current
        if np.linalg.eigvals(Acl).real.max() >= 0:
            break
        try:
            P_next = _sym(
                sla.solve_continuous_lyapunov(Acl.T, -(Q + current @ G @ current))
            )
        except Exception:
            break
        res = np.linalg.norm(A.T @ P_next + P_next @ A - P_next @ G @ P_next + Q, 2)
        step = np.linalg.norm(P_next - current, 2)
        if res < best_res:
            best, best_res = P_next, res
        if best_res <= residual_tolerance(best):
            break
        if step <= 1e-14 * (1.0 + np.linalg.norm(current, 2)):
            break
        current = P_next
    return best, best_res


def _solve_care(A, B, Q, initial=None):
    """Stabilizing ARE solve with Newton refinement and optional warm start."""
    G = B @ B.T
    if initial is None:
        P = _care_schur(A, G, Q)
    else:
        P = _sym(np.asarray(initial, dtype=float))
        if np.linalg.eigvals(A - G @ P).real.max() >= 0:
            P = _care_schur(A, G, Q)
    P, res = _newton_refine(A, G, Q, P)
    if initial is not None and res > residual_tolerance(P):
        # warm start did not converge; fall back to a fresh subspace solve
        P, res = _newton_refine(A, G, Q, _care_schur(A, G, Q))
    return P, res


def _certify(model, P, kind, parameter, residual):
    eig_P = np.linalg.eigvalsh(P)
    if eig_P.min() < -PSD_TOL:
        raise RiccatiError(
            f"{kind} ARE solution not positive semidefinite "
            f"(min eig {eig_P.min():.2e})"
        )
    if residual > residual_tolerance(P):
        raise RiccatiError(
            f"{kind} ARE residual {residual:.2e} exceeds tolerance"
        )
    G = model.B @ model.B.T
    if kind == "scheduled":
        Acl = model.A + (parameter / 2) * np.eye(model.n) - G @ P
    else:
        Acl = model.A - G @ P
    stable = is_hurwitz(Acl)
    if not stable:
        raise RiccatiError(f"{kind} ARE closed loop not Hurwitz")
    Pv = P.copy()
    Pv.setflags(write=False)
    return RiccatiSolution(
        P=Pv,
        kind=kind,
        parameter=parameter,
        residual_norm=residual,
        closed_loop_stable=stable,
    )


def _check_model(model):
    report = check_assumption(model)
    if not report.passed:
        raise RiccatiError(
            "model fails admissibility: "
            f"max Re eig(A)={report.max_real_part:.2e}, "
            f"stabilizable={report.stabilizable}, detectable={report.detectable}"
        )


def solve_scheduled_are(
    model: AgentModel, rho: float, *, initial=None, validate_model: bool = True
) -> RiccatiSolution:
    """Stabilizing psd solution of AᵀP + PA - PBBᵀP + ρP = 0.

    Solved via the exact shift A → A + (ρ/2)I reducing to a standard
    zero-state-weight ARE.  An `initial` stabilizing guess (typically the
    solution at a nearby ρ) enables warm-started Newton continuation.
    """
    if not (0.0 < rho <= 1.0):
        raise ParameterError(f"rho must be in (0, 1], got {rho}")
    if validate_model:
        _check_model(model)
    n = model.n
    A_shift = model.A + (rho / 2) * np.eye(n)
    Q = np.zeros((n, n))
    try:
        P, _ = _solve_care(A_shift, model.B, Q, initial=initial)
    except RiccatiError:
        if 2 * rho <= 1.0:
            # continuation: the solution at 2ρ remains stabilizing here
            warm = solve_scheduled_are(model, 2 * rho, validate_model=False)
            P, _ = _solve_care(A_shift, model.B, Q, initial=warm.P)
        else:
            raise
    residual = np.linalg.norm(
        model.A.T @ P + P @ model.A - P @ (model.B @ model.B.T) @ P + rho * P, 2
    )
    return _certify(model, P, "scheduled", rho, residual)


def solve_lowgain_are(
    model: AgentModel, eps: float, *, initial=None, validate_model: bool = True
) -> RiccatiSolution:
    """Stabilizing solution of AᵀP + PA - PBBᵀP + εI = 0."""
    if not (0.0 < eps <= 1.0):
        raise ParameterError(f"eps must be in (0, 1], got {eps}")
    if validate_model:
        _check_model(model)
    n = model.n
    Q = eps * np.eye(n)
    try:
        P, _ = _solve_care(model.A, model.B, Q, initial=initial)
    except RiccatiError:
        if 2 * eps <= 1.0:
            warm = solve_lowgain_are(model, 2 * eps, validate_model=False)
            P, _ = _solve_care(model.A, model.B, Q, initial=warm.P)
        else:
            raise
    residual = np.linalg.norm(
        model.A.T @ P + P @ model.A - P @ (model.B @ model.B.T) @ P + Q, 2
    )
    return _certify(model, P, "lowgain", eps, residual)


def design_observer_gain(model: AgentModel) -> ObserverGain:
    """Gain K = P_o Cᵀ from the dual ARE AP_o + P_oAᵀ - P_oCᵀCP_o + I = 0."""
    report = check_assumption(model)
    if not report.detectable:
        raise RiccatiError("(A, C) not detectable; cannot design observer gain")
    n = model.n
    P_o, residual = _solve_care(model.A.T, model.C.T, np.eye(n))
    if residual > residual_tolerance(P_o):
        raise RiccatiError(f"observer dual ARE residual {residual:.2e} too large")
    K = P_o @ model.C.T
    if not is_hurwitz(model.A - K @ model.C):
        raise RiccatiError("designed observer gain fails the Hurwitz certificate")
    K.setflags(write=False)
    return ObserverGain(K=K)
