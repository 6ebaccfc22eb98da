"""Benchmark chaotic systems: definitions, integration, noise, and CSV I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import ode

from .library import TermDescriptor

__all__ = [
    "DynamicalSystem",
    "Trajectory",
    "NoiseSpec",
    "IntegrationError",
    "builtin_system",
    "builtin_names",
    "sample_initial_condition",
    "simulate",
    "add_noise",
    "save_trajectory_csv",
    "load_trajectory_csv",
]


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator fails or the state leaves R^m."""


@dataclass(frozen=True)
class DynamicalSystem:
    """An autonomous ODE benchmark with ground truth and sampling ranges."""

    name: str
    dim: int
    rhs: Callable[[np.ndarray], np.ndarray]
    params: dict[str, float]
    truth: tuple[tuple[TermDescriptor, ...], ...]
    ic_ranges: tuple[tuple[float, float], ...]
    default_dt: float

    def __post_init__(self) -> None:
        if len(self.truth) != self.dim:
            raise ValueError("truth must list one term set per equation")
        if any(not eq for eq in self.truth):
            raise ValueError("each equation needs a nonempty truth set")
        if len(self.ic_ranges) != self.dim:
            raise ValueError("ic_ranges must have one interval per variable")
        if any(lo >= hi for lo, hi in self.ic_ranges):
            raise ValueError("every ic_range needs lower < upper")


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states on a time grid."""

    times: np.ndarray
    states: np.ndarray
    dt: float
    noisy: bool

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        if t.ndim != 1 or s.ndim != 2 or s.shape[0] != t.shape[0]:
            raise ValueError("times must be (n,) and states (n, m)")
        steps = np.diff(t)
        if steps.size and not np.allclose(steps, self.dt, rtol=1e-12, atol=1e-12 * abs(self.dt)):
            raise ValueError("time grid is not uniform at the declared dt")
        if not np.all(np.isfinite(s)):
            raise ValueError("states contain non-finite entries")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian observation noise calibrated to an SNR in dB.

    ``snr_db = math.inf`` means no noise.
    """

    snr_db: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not math.isinf(self.snr_db) and not 1.0 <= self.snr_db <= 61.0:
            raise ValueError("snr_db must lie in [1, 61] or be infinite")


def _mono(*exps: int) -> TermDescriptor:
    return TermDescriptor(tuple(exps))


def _sin(var: int, m: int = 3) -> TermDescriptor:
    return TermDescriptor((0,) * m, ("sin", var))


def _lorenz_rhs(x: np.ndarray) -> np.ndarray:
    sigma, rho, zeta = 10.0, 28.0, 8.0 / 3.0
    return np.array(
        [sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - zeta * x[2]]
    )


def _thomas_rhs(x: np.ndarray) -> np.ndarray:
    a = 0.208186
    return np.array(
        [np.sin(x[1]) - a * x[0], np.sin(x[2]) - a * x[1], np.sin(x[0]) - a * x[2]]
    )


def _rossler_rhs(x: np.ndarray) -> np.ndarray:
    a, b, c = 0.2, 0.2, 5.7
    return np.array([-x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c)])


def _dadras_rhs(x: np.ndarray) -> np.ndarray:
    return np.array(
        [
            x[1] - 3.0 * x[0] + 2.7 * x[1] * x[2],
            1.7 * x[1] - x[0] * x[2] + x[2],
            2.0 * x[0] * x[1] - 9.0 * x[2],
        ]
    )


def _aizawa_rhs(x: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x
    return np.array(
        [
            -3.5 * x2 + x1 * (-0.7 + x3),
            3.5 * x1 + x2 * (-0.7 + x3),
            0.95 * x3
            + 0.65
            + 0.1 * x1**3 * x3
            - x3**3 / 3.0
            - (x1**2 + x2**2) * (0.25 * x3 + 1.0),
        ]
    )


def _sprott_rhs(x: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x
    return np.array(
        [
            x2 + 2.07 * x1 * x2 + x1 * x3,
            1.0 - 1.79 * x1**2 + x2 * x3,
            x1 - x1**2 - x2**2,
        ]
    )


def _halvorsen_rhs(x: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x
    return np.array(
        [
            -1.89 * x1 - 4.0 * x2 - 4.0 * x3 - x2**2,
            -1.89 * x2 - 4.0 * x3 - 4.0 * x1 - x3**2,
            -1.89 * x3 - 4.0 * x1 - 4.0 * x2 - x1**2,
        ]
    )


_BUILTINS: dict[str, DynamicalSystem] = {
    "lorenz": DynamicalSystem(
        name="lorenz",
        dim=3,
        rhs=_lorenz_rhs,
        params={"sigma": 10.0, "rho": 28.0, "zeta": 8.0 / 3.0},
        truth=(
            (_mono(1, 0, 0), _mono(0, 1, 0)),
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(1, 0, 1)),
            (_mono(1, 1, 0), _mono(0, 0, 1)),
        ),
        ic_ranges=((-15.0, 15.0), (-15.0, 15.0), (10.0, 40.0)),
        default_dt=0.001,
    ),
    "thomas": DynamicalSystem(
        name="thomas",
        dim=3,
        rhs=_thomas_rhs,
        params={"a": 0.208186},
        truth=(
            (_sin(1), _mono(1, 0, 0)),
            (_sin(2), _mono(0, 1, 0)),
            (_sin(0), _mono(0, 0, 1)),
        ),
        ic_ranges=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)),
        default_dt=0.01,
    ),
    "rossler": DynamicalSystem(
        name="rossler",
        dim=3,
        rhs=_rossler_rhs,
        params={"a": 0.2, "b": 0.2, "c": 5.7},
        truth=(
            (_mono(0, 1, 0), _mono(0, 0, 1)),
            (_mono(1, 0, 0), _mono(0, 1, 0)),
            (_mono(0, 0, 0), _mono(0, 0, 1), _mono(1, 0, 1)),
        ),
        ic_ranges=((-10.0, 10.0), (-10.0, 10.0), (0.0, 20.0)),
        default_dt=0.01,
    ),
    "dadras": DynamicalSystem(
        name="dadras",
        dim=3,
        rhs=_dadras_rhs,
        params={"a": 3.0, "b": 2.7, "c": 1.7, "d": 2.0, "e": 9.0},
        truth=(
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(0, 1, 1)),
            (_mono(0, 1, 0), _mono(0, 0, 1), _mono(1, 0, 1)),
            (_mono(1, 1, 0), _mono(0, 0, 1)),
        ),
        ic_ranges=((-4.0, 4.0), (-4.0, 4.0), (-4.0, 4.0)),
        default_dt=0.01,
    ),
    "aizawa": DynamicalSystem(
        name="aizawa",
        dim=3,
        rhs=_aizawa_rhs,
        params={"a": 0.95, "b": 0.7, "c": 0.65, "d": 3.5, "e": 0.25, "f": 0.1},
        truth=(
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(1, 0, 1)),
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(0, 1, 1)),
            (
                _mono(0, 0, 0),
                _mono(0, 0, 1),
                _mono(2, 0, 0),
                _mono(0, 2, 0),
                _mono(0, 0, 3),
                _mono(2, 0, 1),
                _mono(0, 2, 1),
                _mono(3, 0, 1),
            ),
        ),
        ic_ranges=((-2.0, 2.0), (-2.0, 2.0), (-1.0, 2.0)),
        default_dt=0.01,
    ),
    "sprott": DynamicalSystem(
        name="sprott",
        dim=3,
        rhs=_sprott_rhs,
        params={"a": 2.07, "b": 1.79},
        truth=(
            (_mono(0, 1, 0), _mono(1, 1, 0), _mono(1, 0, 1)),
            (_mono(0, 0, 0), _mono(2, 0, 0), _mono(0, 1, 1)),
            (_mono(1, 0, 0), _mono(2, 0, 0), _mono(0, 2, 0)),
        ),
        ic_ranges=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)),
        default_dt=0.01,
    ),
    "halvorsen": DynamicalSystem(
        name="halvorsen",
        dim=3,
        rhs=_halvorsen_rhs,
        params={"a": 1.89, "b": 4.0},
        truth=(
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(0, 0, 1), _mono(0, 2, 0)),
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(0, 0, 1), _mono(0, 0, 2)),
            (_mono(1, 0, 0), _mono(0, 1, 0), _mono(0, 0, 1), _mono(2, 0, 0)),
        ),
        ic_ranges=((-4.0, 4.0), (-4.0, 4.0), (-4.0, 4.0)),
        default_dt=0.01,
    ),
}


def builtin_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin_system(name: str) -> DynamicalSystem:
    """Look up one of the built-in benchmark systems by identifier."""
    try:
        return _BUILTINS[name]
    except KeyError:
        raise ValueError(
            f"unknown system {name!r}; valid names: {', '.join(_BUILTINS)}"
        ) from None


def sample_initial_condition(sys: DynamicalSystem, seed) -> np.ndarray:
    """Draw each component uniformly from the system's IC ranges."""
    rng = np.random.default_rng(seed)
    return np.array([rng.uniform(lo, hi) for lo, hi in sys.ic_ranges])


def simulate(sys: DynamicalSystem, ic: np.ndarray, dt: float, n: int) -> Trajectory:
    """Integrate with adaptive RK45 (Dormand-Prince), sampling every grid time.

    The integrator is restarted at each grid point so samples are exact
    endpoint solutions rather than dense-output interpolants.
    """
    ic = np.asarray(ic, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n < 2:
        raise ValueError("need at least two samples")
    if ic.shape != (sys.dim,):
        raise ValueError(f"initial condition must have length {sys.dim}")

    solver = ode(lambda t, x: sys.rhs(np.asarray(x)))
    solver.set_integrator("dopri5", rtol=1e-9, atol=1e-9, nsteps=100000)
    solver.set_initial_value(ic, 0.0)
    states = np.empty((n, sys.dim))
    states[0] = ic
    for i in range(1, n):
        states[i] = solver.integrate(i * dt)
        if not solver.successful() or not np.all(np.isfinite(states[i])):
            raise IntegrationError(
                f"integration of {sys.name!r} failed at t={i * dt:.6g}"
            )
    times = np.arange(n) * dt
    return Trajectory(times=times, states=states, dt=dt, noisy=False)


def add_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Add per-column Gaussian noise with sd sigma_x * 10^(-snr_db/20)."""
    if traj.noisy:
        raise ValueError("trajectory is already noisy")
    if math.isinf(spec.snr_db):
        return traj
    rng = np.random.default_rng(spec.seed)
    sigma_x = traj.states.std(axis=0, ddof=1)
    sigma_z = sigma_x * 10.0 ** (-spec.snr_db / 20.0)
    noise = rng.normal(0.0, 1.0, size=traj.states.shape) * sigma_z
    return Trajectory(
        times=traj.times, states=traj.states + noise, dt=traj.dt, noisy=True
    )


def save_trajectory_csv(traj: Trajectory, path) -> None:
    """Write ``t,x1,...,xm`` rows at full double precision."""
    m = traj.dim
    header = "t," + ",".join(f"x{j + 1}" for j in range(m))
    data = np.column_stack([traj.times, traj.states])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def load_trajectory_csv(path, noisy: bool = True) -> Trajectory:
    """Read a trajectory written by :func:`save_trajectory_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0]
    if times.size < 2:
        raise ValueError("trajectory file needs at least two rows")
    dt = float(times[1] - times[0])
    return Trajectory(times=times, states=data[:, 1:], dt=dt, noisy=noisy)
