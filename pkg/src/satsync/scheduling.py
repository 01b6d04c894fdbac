"""State-dependent gain schedule ε(χ) and semi-global ε* selection.

The schedule picks the largest ρ ∈ (0,1] for which

    g(ρ, χ) = χᵀP_ρχ · trace(BᵀP_ρB) ≤ 1,

which keeps ‖BᵀP_ρχ‖ ≤ 1 so the control never saturates.  g is nondecreasing
in ρ, so the maximizer is found by scanning a dyadic grid and bisecting the
bracketing interval.  Bisection probes live on a fixed binary subdivision of
each grid interval so that on-demand ARE solves are shared across calls.

The semi-global ε* has no constructive formula; it is selected by validating
candidate ε values on closed-loop simulations from a deterministic sample of
the prescribed compact sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .model import AgentModel
from .riccati import RiccatiSolution, solve_scheduled_are

RHO_MIN = 2.0**-20
GRID = tuple(2.0**-k for k in range(21))  # 1, 1/2, ..., 2^-20
BISECTION_DEPTH = 10  # relative interval width 2^-10 < 1e-3

# Semi-global search parameters (validated by direct simulation, not by the
# existential constants of the convergence analysis).
EPS0 = 1.0
EPS_RATIO = 0.5
EPS_FLOOR = 2.0**-30
SAT_MARGIN = 0.05
T_VAL = 50.0
TOL_VAL = 1e-2
MAX_VERTEX_SAMPLES = 256


class ScheduleFloorError(RuntimeError):
    """g(ρ_min, χ) > 1: the state left the region the schedule can serve."""

    def __init__(self, chi_norm):
        super().__init__(
            f"gain schedule floor reached at state norm {chi_norm:.6g}"
        )
        self.chi_norm = chi_norm


class SelectionError(RuntimeError):
    """No ε on the search grid validated; carries the best candidate's record."""

    def __init__(self, trials):
        super().__init__("no epsilon candidate passed validation")
        self.trials = trials


class PCache:
    """Cache of scheduled-ARE solutions over the dyadic ρ grid.

    Grid solutions are built eagerly by downward Newton continuation;
    bisection probes between grid points are solved on demand and memoized.
    """

    def __init__(self, model: AgentModel):
        self.model = model
        self.grid = GRID
        self._solutions: dict[float, RiccatiSolution] = {}
        self._trace: dict[float, float] = {}
        prev = None
        for rho in self.grid:
            sol = solve_scheduled_are(
                model, rho, initial=None if prev is None else prev.P,
                validate_model=(prev is None),
            )
            self._store(rho, sol)
            prev = sol

    def _store(self, rho, sol):
        self._solutions[rho] = sol
        B = self.model.B
        self._trace[rho] = float(np.trace(B.T @ sol.P @ B))

    def solution(self, rho: float) -> RiccatiSolution:
        sol = self._solutions.get(rho)
        if sol is None:
            # warm start from the nearest smaller cached grid point
            below = max((r for r in self._solutions if r <= rho), default=None)
            init = self._solutions[below].P if below is not None else None
            sol = solve_scheduled_are(
                self.model, rho, initial=init, validate_model=False
            )
            self._store(rho, sol)
        return sol

    def g(self, rho: float, chi: np.ndarray) -> float:
        sol = self.solution(rho)
        return float(chi @ sol.P @ chi) * self._trace[rho]


def epsilon_of_state(chi, cache: PCache) -> float:
    """Largest ρ ∈ (0,1] with g(ρ, χ) ≤ 1, to 1e-3 relative bisection width."""
    chi = np.asarray(chi, dtype=float).reshape(-1)
    if cache.g(1.0, chi) <= 1.0:
        return 1.0
    grid = cache.grid
    lo = None
    for k in range(1, len(grid)):
        if cache.g(grid[k], chi) <= 1.0:
            lo, hi = k, k - 1
            break
    if lo is None:
        raise ScheduleFloorError(float(np.linalg.norm(chi)))
    # bisect on the fixed dyadic subdivision of [grid[lo], grid[hi]]
    rho_lo, rho_hi = grid[lo], grid[hi]
    width = rho_hi - rho_lo
    j_lo, j_hi = 0, 2**BISECTION_DEPTH  # j_lo passes, j_hi fails
    for _ in range(BISECTION_DEPTH):
        j_mid = (j_lo + j_hi) // 2
        rho_mid = rho_lo + width * (j_mid / 2**BISECTION_DEPTH)
        if cache.g(rho_mid, chi) <= 1.0:
            j_lo = j_mid
        else:
            j_hi = j_mid
    return rho_lo + width * (j_lo / 2**BISECTION_DEPTH)


@dataclass(frozen=True)
class CompactSetSpec:
    """Axis-aligned boxes (half-widths around the origin) for initial states.

    agent/exo half-widths apply to each n-dimensional block; protocol
    half-widths apply to each protocol-state block.  Scalars broadcast.
    """

    agent: np.ndarray
    exo: np.ndarray
    protocol: np.ndarray

    def __post_init__(self):
        for name in ("agent", "exo", "protocol"):
            h = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(h < 0):
                raise ValueError(f"{name} half-widths must be nonnegative")
            h.setflags(write=False)
            object.__setattr__(self, name, h)


@dataclass
class EpsilonTrial:
    epsilon: float
    passed: bool
    max_control: float
    final_sync_error: float
    violation: Optional[str] = None


@dataclass
class SelectionReport:
    epsilon_star: Optional[float]
    trials: list[EpsilonTrial] = field(default_factory=list)
    n_samples: int = 0
    horizon: float = T_VAL
    margin: float = SAT_MARGIN
    tolerance: float = TOL_VAL
    method: str = "simulation-validated grid search"

    def to_dict(self):
        return {
            "epsilon_star": self.epsilon_star,
            "n_samples": self.n_samples,
            "horizon": self.horizon,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "method": self.method,
            "trials": [
                {
                    "epsilon": t.epsilon,
                    "passed": t.passed,
                    "max_control": t.max_control,
                    "final_sync_error": t.final_sync_error,
                    "violation": t.violation,
                }
                for t in self.trials
            ],
        }


def _expand_halfwidths(sets: CompactSetSpec, n: int, N: int, partial: bool):
    def block(h, dim):
        h = np.broadcast_to(h, (dim,)) if h.size in (1, dim) else None
        if h is None:
            raise ValueError("half-width length incompatible with state dimension")
        return np.asarray(h, dtype=float)

    agent = block(sets.agent, n)
    exo = block(sets.exo, n)
    proto = block(sets.protocol, n)
    parts = [np.tile(agent, N), exo, np.tile(proto, N)]
    if partial:
        parts.append(np.tile(proto, N))
    return np.concatenate(parts)


def sample_box_vertices(halfwidths: np.ndarray) -> np.ndarray:
    """Deterministic sample of a box: all vertices if their count is ≤ 256,
    otherwise 256 scaled-Hadamard sign patterns plus the origin."""
    h = np.asarray(halfwidths, dtype=float)
    active = np.nonzero(h > 0)[0]
    d = active.size
    if d == 0:
        return np.zeros((1, h.size))
    if 2**d <= MAX_VERTEX_SAMPLES:
        signs = np.array(
            [[1.0 if (v >> k) & 1 else -1.0 for k in range(d)]
             for v in range(2**d)]
        )
    else:
        order = MAX_VERTEX_SAMPLES
        while order < d:
            order *= 2
        H = sla.hadamard(order)[:MAX_VERTEX_SAMPLES, :d].astype(float)
        signs = np.vstack([H, np.zeros((1, d))])
    samples = np.zeros((signs.shape[0], h.size))
    samples[:, active] = signs * h[active]
    return samples


def select_semiglobal_epsilon(
    model: AgentModel,
    net,
    sets: CompactSetSpec,
    protocol_kind,
    *,
    horizon: float = T_VAL,
    margin: float = SAT_MARGIN,
    tolerance: float = TOL_VAL,
    rtol: float = 1e-6,
    atol: float = 1e-8,
) -> SelectionReport:
    """Largest grid ε whose closed loop, simulated from every sampled initial
    condition, stays strictly inside the saturation bound and synchronizes.

    Returns a SelectionReport whose epsilon_star is the selected ε*.
    """
    from . import protocols  # late import: protocols depends on this module

    if isinstance(protocol_kind, str):
        coupling, observer_gain = protocol_kind, None
    else:
        coupling = protocol_kind.coupling
        observer_gain = protocol_kind.observer_gain
    partial = coupling == "partial"
    if partial and observer_gain is None:
        from .riccati import design_observer_gain

        observer_gain = design_observer_gain(model)
    halfwidths = _expand_halfwidths(sets, model.n, net.N, partial)
    samples = sample_box_vertices(halfwidths)
    trials = []
    eps = EPS0
    while eps >= EPS_FLOOR:
        kind = protocols.ProtocolKind(
            "semiglobal", coupling, epsilon=eps, observer_gain=observer_gain,
        )
        passed, max_u, final_err, violation = _validate_epsilon(
            model, net, kind, samples, horizon, margin, tolerance, rtol, atol
        )
        trials.append(
            EpsilonTrial(
                epsilon=eps, passed=passed, max_control=max_u,
                final_sync_error=final_err, violation=violation,
            )
        )
        if passed:
            return SelectionReport(
                epsilon_star=eps, trials=trials, n_samples=samples.shape[0],
                horizon=horizon, margin=margin, tolerance=tolerance,
            )
        eps *= EPS_RATIO
    raise SelectionError(trials)


def _validate_epsilon(model, net, kind, samples, horizon, margin, tolerance,
                      rtol, atol):
    from . import protocols, sim

    field_fn = protocols.build_field(model, net, kind)
    max_u = 0.0
    worst_err = 0.0
    for z0 in samples:
        traj = sim.integrate(
            field_fn, z0, (0.0, horizon), method="adaptive_rk45",
            rtol=rtol, atol=atol,
        )
        u_inf = float(np.abs(traj.controls).max()) if traj.controls.size else 0.0
        max_u = max(max_u, u_inf)
        metrics = sim.sync_metrics(traj, tolerance)
        err = float(metrics.error_series[-1])
        worst_err = max(worst_err, err)
        if u_inf > 1.0 - margin:
            return False, max_u, worst_err, (
                f"control bound violated: ‖u‖∞={u_inf:.4g} > {1.0 - margin}"
            )
        if err >= tolerance:
            return False, max_u, worst_err, (
                f"sync error {err:.4g} ≥ {tolerance} at t={horizon}"
            )
    return True, max_u, worst_err, None
