"""ODE integration of closed-loop fields and trajectory diagnostics.

Two explicit Runge-Kutta methods: classic fixed-step RK4 and adaptive
Dormand-Prince RK45.  Fields exposing a `control_info(t, z)` method get
their pre-saturation controls (and realized schedule values, when present)
recorded at every accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
DEFAULT_DT_MIN = 1e-10

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


class IntegrationError(RuntimeError):
    """Step-size underflow; carries the time and state where it happened."""

    def __init__(self, message, t, z):
        super().__init__(message)
        self.t = t
        self.z = z


class DivergenceError(RuntimeError):
    """Non-finite state encountered."""

    def __init__(self, message, t, z):
        super().__init__(message)
        self.t = t
        self.z = z


@dataclass
class IntegratorStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_field_evals: int = 0


@dataclass
class Trajectory:
    """Time-indexed stacked-state record with per-step control extraction."""

    times: np.ndarray
    states: np.ndarray  # (T, dim)
    controls: np.ndarray  # (T, N, m) pre-saturation; empty if not recorded
    realized_epsilon: Optional[np.ndarray]  # (T, N) for global kinds
    layout: object = None  # StateLayout when integrating a protocol field
    stats: IntegratorStats = field(default_factory=IntegratorStats)

    @property
    def has_controls(self) -> bool:
        return self.controls.size > 0


def _record(field_fn, t, z, controls, eps_values):
    info = getattr(field_fn, "control_info", None)
    if info is None:
        return
    U, eps = info(t, z)
    controls.append(np.asarray(U, dtype=float))
    if eps is not None:
        eps_values.append(np.asarray(eps, dtype=float))


def _finish(field_fn, times, states, controls, eps_values, stats):
    controls_arr = (
        np.array(controls) if controls else np.empty((len(times), 0, 0))
    )
    eps_arr = np.array(eps_values) if eps_values else None
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        controls=controls_arr,
        realized_epsilon=eps_arr,
        layout=getattr(field_fn, "layout", None),
        stats=stats,
    )


def _check_finite(t, z):
    if not np.all(np.isfinite(z)):
        raise DivergenceError(f"non-finite state at t={t:.6g}", t, z)


def integrate(
    field_fn: Callable,
    z0,
    t_span,
    *,
    method: str = "adaptive_rk45",
    dt: float = 1e-2,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    dt_min: float = DEFAULT_DT_MIN,
) -> Trajectory:
    """Integrate ż = field_fn(t, z) over t_span, recording accepted steps."""
    t0, tf = float(t_span[0]), float(t_span[1])
    if tf <= t0:
        raise ValueError("t_span must be increasing")
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    if method == "fixed_rk4":
        return _integrate_rk4(field_fn, z0, t0, tf, dt)
    if method == "adaptive_rk45":
        return _integrate_rk45(field_fn, z0, t0, tf, rtol, atol, dt_min)
    raise ValueError(f"unknown method {method!r}")


def _integrate_rk4(field_fn, z0, t0, tf, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    stats = IntegratorStats()
    times, states, controls, eps_values = [t0], [z0], [], []
    _record(field_fn, t0, z0, controls, eps_values)
    t, z = t0, z0
    n_steps = int(np.ceil((tf - t0) / dt - 1e-12))
    for k in range(n_steps):
        h = min(dt, tf - t)
        k1 = field_fn(t, z)
        k2 = field_fn(t + h / 2, z + h / 2 * k1)
        k3 = field_fn(t + h / 2, z + h / 2 * k2)
        k4 = field_fn(t + h, z + h * k3)
        z = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (k + 1) * dt if k + 1 < n_steps else tf
        _check_finite(t, z)
        stats.n_steps += 1
        stats.n_field_evals += 4
        times.append(t)
        states.append(z)
        _record(field_fn, t, z, controls, eps_values)
    return _finish(field_fn, times, states, controls, eps_values, stats)


def _integrate_rk45(field_fn, z0, t0, tf, rtol, atol, dt_min):
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    stats = IntegratorStats()
    times, states, controls, eps_values = [t0], [z0], [], []
    _record(field_fn, t0, z0, controls, eps_values)
    t, z = t0, z0
    k1 = field_fn(t, z)
    stats.n_field_evals += 1
    # initial step from the field magnitude
    scale = atol + rtol * np.linalg.norm(z)
    h = min(0.1 * scale / max(np.linalg.norm(k1), 1e-10), tf - t0, 1.0)
    h = max(h, dt_min)
    K = np.empty((7, z.size))
    while t < tf:
        h = min(h, tf - t)
        K[0] = k1
        for s in range(1, 7):
            zs = z + h * sum(a * K[j] for j, a in enumerate(_DP_A[s]))
            K[s] = field_fn(t + _DP_C[s] * h, zs)
        stats.n_field_evals += 6
        z5 = z + h * (_DP_B5 @ K)
        err_vec = h * ((_DP_B5 - _DP_B4) @ K)
        err = np.linalg.norm(err_vec)
        tol = atol + rtol * np.linalg.norm(z5)
        if not np.isfinite(err):
            # overflow in a trial step: reject hard and shrink
            stats.n_rejected += 1
            h *= 0.2
            if h < dt_min:
                raise IntegrationError(
                    f"step size underflow (h={h:.3g} < {dt_min}) at t={t:.6g}",
                    t, z,
                )
            continue
        if err <= tol:
            t_new = t + h
            _check_finite(t_new, z5)
            t, z = t_new, z5
            k1 = K[6]  # FSAL
            stats.n_steps += 1
            times.append(t)
            states.append(z)
            _record(field_fn, t, z, controls, eps_values)
        else:
            stats.n_rejected += 1
        factor = 0.9 * (tol / err) ** 0.2 if err > 0 else 5.0
        h *= min(max(factor, 0.2), 5.0)
        if h < dt_min and t < tf:
            raise IntegrationError(
                f"step size underflow (h={h:.3g} < {dt_min}) at t={t:.6g}", t, z
            )
    return _finish(field_fn, times, states, controls, eps_values, stats)


def saturation_events(traj: Trajectory) -> list[tuple[float, int, int, float]]:
    """All (t, agent, component, |u|) with pre-saturation |u| > 1.

    An empty list certifies the closed loop operated linearly throughout.
    """
    if not traj.has_controls:
        raise ValueError("trajectory has no recorded controls")
    events = []
    exceed = np.abs(traj.controls) > 1.0
    for k, i, c in zip(*np.nonzero(exceed)):
        events.append(
            (float(traj.times[k]), int(i), int(c),
             float(abs(traj.controls[k, i, c])))
        )
    return events


@dataclass
class SyncMetrics:
    """Per-time synchronization error and derived summary values."""

    error_series: np.ndarray  # max_i ‖x_i - x_r‖ at each accepted step
    convergence_time: Optional[float]
    max_control_inf_norm: float


def sync_error_series(traj: Trajectory) -> np.ndarray:
    if traj.layout is None:
        raise ValueError("trajectory has no stacked-state layout")
    errors = np.empty(traj.times.size)
    for k, z in enumerate(traj.states):
        x, x_r, _, _ = traj.layout.split(z)
        errors[k] = np.linalg.norm(x - x_r[None, :], axis=1).max()
    return errors


def sync_metrics(traj: Trajectory, tol: float) -> SyncMetrics:
    """Sync error series and the first time it stays below tol to the end."""
    errors = sync_error_series(traj)
    below = errors < tol
    conv_time = None
    # first index from which the error stays below tol through the horizon
    suffix_ok = np.flip(np.logical_and.accumulate(np.flip(below)))
    hits = np.nonzero(suffix_ok)[0]
    if hits.size:
        conv_time = float(traj.times[hits[0]])
    max_u = float(np.abs(traj.controls).max()) if traj.has_controls else 0.0
    return SyncMetrics(
        error_series=errors,
        convergence_time=conv_time,
        max_control_inf_norm=max_u,
    )
