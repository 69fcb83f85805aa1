"""Conventional transient solver used as the verification oracle.

DC operating point by damped Newton, then fixed-step backward Euler or
trapezoidal integration of the same residual the network is trained on.
Newton Jacobians come from forward-mode tangents: every unknown is seeded
with a unit tangent in one vectorised pass, so no device has a hand-written
stamp.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Dual
from .errors import ConfigError, ConvergenceError, NonFiniteError
from .netlist import Sin, source_excursion
from .system import DaeSystem
from .waveform import Waveform

log = logging.getLogger(__name__)

MAX_HALVINGS = 8


@dataclass(frozen=True)
class StepConfig:
    method: str = "trapezoidal"  # or "backward_euler"
    dt: float | None = None  # default t_stop / 2000
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    damping: float = 1.0

    def validate(self) -> None:
        if self.method not in ("trapezoidal", "backward_euler"):
            raise ConfigError(f"unknown integration method {self.method!r}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not self.newton_tol > 0:
            raise ConfigError("newton_tol must be > 0")
        if self.newton_max_iter < 1:
            raise ConfigError("newton_max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must be in (0, 1]")


@dataclass
class NewtonStats:
    iterations: int = 0
    solves: int = 0
    max_iterations: int = 0
    worst_norm: float = 0.0


def _unpack(rows, n: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.empty(n)
    jac = np.zeros((n, n))
    for i, r in enumerate(rows):
        if isinstance(r, Dual):
            f[i] = r.value
            jac[i] = r.tangent
        else:
            f[i] = r
    return f, jac


def _newton(func, x0: np.ndarray, tol: float, max_iter: int, damping: float, step=None):
    """Damped Newton on ``func(x) -> (f, J)``; returns ``(x, iterations)``."""
    x = x0.copy()
    f, jac = func(x)
    norm = float(np.max(np.abs(f)))
    trace = [norm]
    for it in range(1, max_iter + 1):
        if not np.isfinite(norm):
            raise NonFiniteError(f"non-finite residual in Newton iteration (step {step})")
        if norm <= tol:
            return x, it - 1
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise ConvergenceError(
                f"singular Jacobian at Newton iteration {it}", it, norm, step, trace
            ) from None
        lam = damping
        for _ in range(MAX_HALVINGS + 1):
            x_try = x + lam * dx
            f_try, jac_try = func(x_try)
            norm_try = float(np.max(np.abs(f_try)))
            if np.isfinite(norm_try) and norm_try < norm:
                break
            lam *= 0.5
        x, f, jac, norm = x_try, f_try, jac_try, norm_try
        trace.append(norm)
    if norm <= tol:
        return x, max_iter
    where = "DC operating point" if step is None else f"time step {step}"
    raise ConvergenceError(
        f"Newton failed at {where}: residual {norm:.3e} after {max_iter} iterations "
        f"(trace {', '.join(f'{v:.2e}' for v in trace[-6:])})",
        max_iter,
        norm,
        step,
        trace,
    )


def _seeded(x: np.ndarray, eye: np.ndarray, scale: float = 1.0) -> list[Dual]:
    return [Dual(float(x[i]), eye[i] * scale) for i in range(len(x))]


def _dc_function(sys: DaeSystem, t0: float):
    n = sys.n
    eye = np.eye(n)
    zero = [0.0] * n
    scales = sys.scales
    held = np.flatnonzero(sys.held)

    def func(x):
        f, jac = _unpack(sys.residual(_seeded(x, eye), zero, t0), n)
        for i in held:
            f[i] = (x[i] - sys.u0[i]) / scales[i]
            jac[i] = eye[i] / scales[i]
        return f, jac

    return func


def dc_operating_point(sys: DaeSystem, t0: float = 0.0, cfg: StepConfig | None = None) -> np.ndarray:
    """Solve ``r(u, 0, t0) = 0`` from ``u0`` with explicit initial conditions held.

    Held unknowns have their equation replaced by ``(u_i - u0_i)/scale_i``.
    """
    cfg = cfg or StepConfig()
    func = _dc_function(sys, t0)
    x, _ = _newton(func, sys.u0.astype(np.float64), cfg.newton_tol, cfg.newton_max_iter, cfg.damping)
    return x


def _source_frequency(spec, t_stop: float) -> float:
    if isinstance(spec, Sin):
        return spec.freq
    period = getattr(spec, "period", 0.0)
    return 1.0 / (period if period > 0 else t_stop)


def small_signal_swing(sys: DaeSystem, u_op: np.ndarray) -> np.ndarray:
    """Linearised excursion of every unknown about ``u_op`` under the sources.

    Each time-varying source is moved by its largest departure from its
    starting value at its fundamental frequency ``f``, and the system
    ``(dr/du + j 2 pi f dr/du') du = -dr/ds ds`` is solved; magnitudes are
    summed over sources.  Unknowns no source reaches come out as zero.
    Returns zeros when a linearised system is singular.
    """
    n = sys.n
    eye = np.eye(n)
    u_op = np.asarray(u_op, dtype=np.float64)
    _, g = _unpack(sys.residual(_seeded(u_op, eye), [0.0] * n, 0.0), n)
    _, c = _unpack(sys.residual(list(u_op), _seeded(np.zeros(n), eye), 0.0), n)
    swing = np.zeros(n)
    for i, name in enumerate(sys.eq_names):
        if not name.startswith("src("):
            continue
        spec = sys.circuit.component(name[4:-1]).source
        a = source_excursion(spec)
        if a == 0.0:
            continue
        rhs = np.zeros(n, dtype=complex)
        rhs[i] = a / sys.eq_scales[i]  # d(row)/d(source) = -1/eq_scale
        omega = 2.0 * np.pi * _source_frequency(spec, sys.t_stop)
        try:
            swing += np.abs(np.linalg.solve(g + 1j * omega * c, rhs))
        except np.linalg.LinAlgError:
            return np.zeros(n)
    return swing


def transient(sys: DaeSystem, cfg: StepConfig | None = None, u_start: np.ndarray | None = None,
              stats: NewtonStats | None = None) -> Waveform:
    """Integrate from the DC operating point to ``t_stop`` with a fixed step."""
    cfg = cfg or StepConfig()
    cfg.validate()
    dt = cfg.dt if cfg.dt is not None else sys.t_stop / 2000
    if dt > sys.t_stop * (1 + 1e-12):
        raise ConfigError("dt must not exceed t_stop")
    n_steps = max(1, int(round(sys.t_stop / dt)))
    dt = sys.t_stop / n_steps
    times = np.linspace(0.0, sys.t_stop, n_steps + 1)
    stats = stats if stats is not None else NewtonStats()

    n = sys.n
    eye = np.eye(n)
    u = dc_operating_point(sys, 0.0, cfg) if u_start is None else np.asarray(u_start, float).copy()
    out = np.empty((n_steps + 1, n))
    out[0] = u
    trap = cfg.method == "trapezoidal"
    inv_dt = 1.0 / dt

    for k in range(n_steps):
        t0, t1 = times[k], times[k + 1]
        uk = u
        const_u = [float(v) for v in uk]

        def func(x, uk=uk, const_u=const_u, t0=t0, t1=t1):
            du = _seeded((x - uk) * inv_dt, eye, inv_dt)
            new = sys.residual(_seeded(x, eye), du, t1)
            if trap:
                old = sys.residual(const_u, du, t0)
                new = [0.5 * (a + b) for a, b in zip(old, new)]
            return _unpack(new, n)

        try:
            u, iters = _newton(func, uk, cfg.newton_tol, cfg.newton_max_iter, cfg.damping, step=k + 1)
        except ConvergenceError:
            log.debug("Newton failed at step %d (t=%.4g)", k + 1, t1)
            raise
        stats.iterations += iters
        stats.solves += 1
        stats.max_iterations = max(stats.max_iterations, iters)
        out[k + 1] = u

    return Waveform(times, {name: out[:, i].copy() for i, name in enumerate(sys.names)})
