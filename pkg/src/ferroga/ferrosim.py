"""Discrete-lattice ferroelectric simulator.

Each site (i, j) of an n x n grid carries a continuous polarization vector
(px, py). The site free energy is a double-well polynomial

    F_ij = a1 (px^2 + py^2) + a2 (px^4 + py^4) + a3 px^2 py^2
           - E_loc_x px - E_loc_y py

with the local field E_loc = E_ext + E_dep + E_d(i, j), where E_dep is a
spatially uniform depolarization field -alpha_dep <p> and E_d is a static
per-site disorder field. Neighboring sites couple through K (dpx)^2 +
K (dpy)^2 over nearest-neighbor links. Polarization relaxes downhill via

    gamma dp/dt = -dF/dp

integrated with explicit Euler steps. The scalar objective is the summed
absolute discrete curl of the polarization field after the run.

Convention: index i is the x direction (array axis 0), j is the y
direction (array axis 1). The local field is treated as externally imposed
when differentiating (E_dep frozen at the current state), the standard
mean-field convention for this model family.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

SQRT_EPS = 1e-12


class Boundary(Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class NonFiniteError(RuntimeError):
    """Polarization became NaN/Inf (timestep too large or bad coefficients)."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class LatticeConfig:
    """Grid geometry, free-energy coefficients and integration settings.

    Defaults put the zero-field double well minima at |p| = 1/sqrt(2) and
    the homogeneous coercive field at 4/(3*sqrt(6)) ~ 0.544, below the
    default trajectory field scale of 1.0.
    """

    n: int = 20
    alpha1: float = -1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    k_coupling: float = 0.5
    gamma: float = 1.0
    alpha_dep: float = 0.05
    dt: float = 1.0 / 300.0
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not (self.alpha1 < 0 and self.alpha2 > 0):
            raise ValueError(
                "double-well requires alpha1 < 0 and alpha2 > 0, got "
                f"alpha1={self.alpha1}, alpha2={self.alpha2}"
            )


@dataclass(frozen=True)
class DisorderField:
    """Static per-site field offsets, axis-aligned, immutable once built."""

    ex: np.ndarray
    ey: np.ndarray
    fraction: float
    magnitude: float

    def __post_init__(self):
        self.ex.setflags(write=False)
        self.ey.setflags(write=False)

    @classmethod
    def zeros(cls, n: int) -> "DisorderField":
        return cls(np.zeros((n, n)), np.zeros((n, n)), 0.0, 0.0)


@dataclass
class LatticeState:
    """Polarization components on the grid; must stay finite everywhere."""

    px: np.ndarray
    py: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "LatticeState":
        return cls(np.zeros((n, n)), np.zeros((n, n)))

    def copy(self) -> "LatticeState":
        return LatticeState(self.px.copy(), self.py.copy())


def generate_disorder(
    seed: int,
    config: LatticeConfig,
    fraction: float = 0.15,
    magnitude: float = 0.5,
) -> DisorderField:
    """Build a random disorder field: round(fraction * n^2) sites receive a
    field offset along x or y (chosen uniformly), with amplitude uniform in
    [-magnitude, +magnitude]. Deterministic given the seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if magnitude < 0:
        raise ValueError(f"magnitude must be >= 0, got {magnitude}")
    n = config.n
    rng = np.random.default_rng(seed)
    count = int(round(fraction * n * n))
    ex = np.zeros((n, n))
    ey = np.zeros((n, n))
    if count > 0:
        sites = rng.choice(n * n, size=count, replace=False)
        axes = rng.integers(0, 2, size=count)
        amps = rng.uniform(-magnitude, magnitude, size=count)
        rows, cols = np.divmod(sites, n)
        x_sel = axes == 0
        ex[rows[x_sel], cols[x_sel]] = amps[x_sel]
        ey[rows[~x_sel], cols[~x_sel]] = amps[~x_sel]
    return DisorderField(ex, ey, fraction, magnitude)


def depolarization_field(state: LatticeState, config: LatticeConfig) -> np.ndarray:
    """Spatially uniform depolarization field -alpha_dep * <p>."""
    return np.array(
        [-config.alpha_dep * state.px.mean(), -config.alpha_dep * state.py.mean()]
    )


def _e_ext_pair(e_ext) -> tuple[float, float]:
    """Coerce an external field to (x, y); a scalar means x-only drive."""
    arr = np.asarray(e_ext, dtype=float)
    if arr.ndim == 0:
        return float(arr), 0.0
    if arr.shape == (2,):
        return float(arr[0]), float(arr[1])
    raise ValueError(f"external field must be a scalar or 2-vector, got shape {arr.shape}")


def local_field(
    e_ext: np.ndarray,
    state: LatticeState,
    disorder: DisorderField,
    site: tuple[int, int],
    config: LatticeConfig,
) -> np.ndarray:
    """Local field at one site: E_ext + E_dep + E_d(i, j)."""
    i, j = site
    ex, ey = _e_ext_pair(e_ext)
    e_dep = depolarization_field(state, config)
    return np.array(
        [ex + e_dep[0] + disorder.ex[i, j], ey + e_dep[1] + disorder.ey[i, j]]
    )


def site_energy(
    state: LatticeState,
    site: tuple[int, int],
    e_loc: np.ndarray,
    config: LatticeConfig,
) -> float:
    """Single-site free energy for a given (already assembled) local field."""
    i, j = site
    px = state.px[i, j]
    py = state.py[i, j]
    a1, a2, a3 = config.alpha1, config.alpha2, config.alpha3
    return float(
        a1 * (px**2 + py**2)
        + a2 * (px**4 + py**4)
        + a3 * px**2 * py**2
        - e_loc[0] * px
        - e_loc[1] * py
    )


def _neighbor_counts(n: int, boundary: Boundary) -> np.ndarray:
    if boundary is Boundary.PERIODIC:
        return np.full((n, n), 4.0)
    cnt = np.full((n, n), 4.0)
    cnt[0, :] -= 1.0
    cnt[-1, :] -= 1.0
    cnt[:, 0] -= 1.0
    cnt[:, -1] -= 1.0
    return cnt


def _neighbor_sum(p: np.ndarray, boundary: Boundary) -> np.ndarray:
    """Sum of the (2-4) nearest-neighbor values at each site."""
    if boundary is Boundary.PERIODIC:
        return (
            np.roll(p, 1, axis=0)
            + np.roll(p, -1, axis=0)
            + np.roll(p, 1, axis=1)
            + np.roll(p, -1, axis=1)
        )
    s = np.zeros_like(p)
    s[:-1, :] += p[1:, :]
    s[1:, :] += p[:-1, :]
    s[:, :-1] += p[:, 1:]
    s[:, 1:] += p[:, :-1]
    return s


def _coupling_energy(p: np.ndarray, boundary: Boundary) -> float:
    """Sum of squared differences over undirected nearest-neighbor links."""
    if boundary is Boundary.PERIODIC:
        dx = p - np.roll(p, -1, axis=0)
        dy = p - np.roll(p, -1, axis=1)
        return float((dx**2).sum() + (dy**2).sum())
    dx = np.diff(p, axis=0)
    dy = np.diff(p, axis=1)
    return float((dx**2).sum() + (dy**2).sum())


def total_free_energy(
    state: LatticeState,
    e_ext: np.ndarray,
    disorder: DisorderField,
    config: LatticeConfig,
    frozen_e_dep: np.ndarray | None = None,
) -> float:
    """Total free energy: site terms plus K times the link coupling.

    ``frozen_e_dep`` substitutes a fixed depolarization field in place of
    the one implied by ``state``; the mean-field gradient convention (and
    the finite-difference checks against it) freeze E_dep at a base state.
    """
    e_dep = (
        depolarization_field(state, config) if frozen_e_dep is None else frozen_e_dep
    )
    px, py = state.px, state.py
    a1, a2, a3 = config.alpha1, config.alpha2, config.alpha3
    ext_x, ext_y = _e_ext_pair(e_ext)
    e_loc_x = ext_x + e_dep[0] + disorder.ex
    e_loc_y = ext_y + e_dep[1] + disorder.ey
    site_sum = float(
        (
            a1 * (px**2 + py**2)
            + a2 * (px**4 + py**4)
            + a3 * px**2 * py**2
            - e_loc_x * px
            - e_loc_y * py
        ).sum()
    )
    k = config.k_coupling
    coupling = _coupling_energy(px, config.boundary) + _coupling_energy(
        py, config.boundary
    )
    return site_sum + k * coupling


def force(
    state: LatticeState,
    e_ext: np.ndarray,
    disorder: DisorderField,
    config: LatticeConfig,
) -> np.ndarray:
    """Per-site relaxation force -dF/dp with E_loc frozen at the current state.

    Returns an (n, n, 2) array; [..., 0] is the x component.
    """
    fx, fy = _force_xy(state.px, state.py, e_ext, disorder, config)
    return np.stack([fx, fy], axis=-1)


def _force_xy(px, py, e_ext, disorder, config):
    a1, a2, a3, k = config.alpha1, config.alpha2, config.alpha3, config.k_coupling
    e_dep_x = -config.alpha_dep * px.mean()
    e_dep_y = -config.alpha_dep * py.mean()
    cnt = _neighbor_counts(config.n, config.boundary)
    ext_x, ext_y = _e_ext_pair(e_ext)
    e_loc_x = ext_x + e_dep_x + disorder.ex
    e_loc_y = ext_y + e_dep_y + disorder.ey
    fx = -(
        2 * a1 * px
        + 4 * a2 * px**3
        + 2 * a3 * px * py**2
        - e_loc_x
        + 2 * k * (cnt * px - _neighbor_sum(px, config.boundary))
    )
    fy = -(
        2 * a1 * py
        + 4 * a2 * py**3
        + 2 * a3 * py * px**2
        - e_loc_y
        + 2 * k * (cnt * py - _neighbor_sum(py, config.boundary))
    )
    return fx, fy


def step(
    state: LatticeState,
    e_ext_t: np.ndarray,
    disorder: DisorderField,
    config: LatticeConfig,
) -> LatticeState:
    """One explicit Euler step: p <- p + (dt/gamma) * force."""
    fx, fy = _force_xy(state.px, state.py, e_ext_t, disorder, config)
    h = config.dt / config.gamma
    px = state.px + h * fx
    py = state.py + h * fy
    if not (np.isfinite(px).all() and np.isfinite(py).all()):
        raise NonFiniteError("polarization update produced NaN/Inf")
    return LatticeState(px, py)


SCHEDULE_LENGTH = 950  # 900 driven steps + 50 equilibration steps


def simulate(
    schedule,
    disorder: DisorderField,
    config: LatticeConfig,
    record: bool = False,
):
    """Run the full 950-step trajectory from an all-zero initial state.

    ``schedule`` is a FieldSchedule or a length-950 array of x-field values
    (the external field acts along x only). Returns the final LatticeState,
    or (state, history) with a (950, 2) array of per-step <p> when
    ``record`` is true. Deterministic for identical inputs.
    """
    values = np.asarray(getattr(schedule, "values", schedule), dtype=float)
    if values.ndim != 1 or values.shape[0] != SCHEDULE_LENGTH:
        raise ValueError(
            f"schedule must hold exactly {SCHEDULE_LENGTH} samples, got {values.shape}"
        )
    state = LatticeState.zeros(config.n)
    e_ext = np.zeros(2)
    history = np.empty((SCHEDULE_LENGTH, 2)) if record else None
    for t in range(SCHEDULE_LENGTH):
        e_ext[0] = values[t]
        try:
            state = step(state, e_ext, disorder, config)
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"non-finite polarization at timestep {t}", step_index=t
            ) from exc
        if record:
            history[t, 0] = state.px.mean()
            history[t, 1] = state.py.mean()
    if record:
        return state, history
    return state


def curl_fitness(state: LatticeState) -> float:
    """Sum over interior sites of |d(py)/dx - d(px)/dy|, central differences,
    unit lattice spacing. Zero on any spatially uniform state.
    """
    px, py = state.px, state.py
    curl = 0.5 * (py[2:, 1:-1] - py[:-2, 1:-1]) - 0.5 * (px[1:-1, 2:] - px[1:-1, :-2])
    return float(np.abs(curl).sum())
