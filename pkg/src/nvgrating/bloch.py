"""Exact rotating-frame propagation of a two-level Bloch vector.

Controls are piecewise constant, so every step is a rigid rotation of the
Bloch vector about ``(omega_x, omega_y, delta)`` by ``|Omega_eff| * dt``;
that rotation is applied in closed form (Rodrigues) rather than integrated.
All angular frequencies are in rad/s, times in seconds.
"""

from dataclasses import dataclass

import numpy as np

from . import TWO_PI
from ._kernels import propagate_points, rotate_many
from ._parallel import concat, map_chunks

Z_UP = np.array([0.0, 0.0, 1.0])


class PulseError(ValueError):
    pass


class GridError(ValueError):
    pass


@dataclass
class ControlPulse:
    """Piecewise-constant control waveform.

    Attributes
    ----------
    dt : float
        Duration of every step (s).
    steps : ndarray, shape (n, 3)
        Per-step ``(omega_x, omega_y, delta_z)`` in rad/s.
    omega_max : float
        Cap on the transverse amplitude ``hypot(omega_x, omega_y)``.
    """

    dt: float
    steps: np.ndarray
    omega_max: float

    def __post_init__(self):
        self.steps = np.array(self.steps, dtype=float).reshape(-1, 3)
        self.dt = float(self.dt)
        self.omega_max = float(self.omega_max)
        if len(self.steps) == 0:
            raise PulseError("pulse has no steps")
        if not self.dt > 0:
            raise PulseError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.steps)):
            raise PulseError("pulse contains non-finite controls")
        amp = self.amplitude.max()
        if amp > self.omega_max * (1 + 1e-9):
            raise PulseError(
                f"transverse amplitude {amp:.6g} rad/s exceeds omega_max {self.omega_max:.6g}"
            )

    @property
    def n_steps(self):
        return len(self.steps)

    @property
    def duration(self):
        return self.n_steps * self.dt

    @property
    def amplitude(self):
        return np.hypot(self.steps[:, 0], self.steps[:, 1])

    @property
    def times(self):
        """Step midpoints."""
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def scaled(self, s):
        """Pulse with both quadratures multiplied by ``s``; delta_z untouched."""
        steps = self.steps.copy()
        steps[:, :2] *= s
        return ControlPulse(self.dt, steps, max(self.omega_max, self.omega_max * s))

    def then(self, other):
        if other.dt != self.dt:
            raise PulseError("cannot concatenate pulses with different dt")
        return ControlPulse(self.dt, np.vstack([self.steps, other.steps]),
                            max(self.omega_max, other.omega_max))

    def to_dict(self):
        return {"dt_s": self.dt, "omega_max_rad_s": self.omega_max,
                "steps": self.steps.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dt_s"], np.asarray(d["steps"], dtype=float), d["omega_max_rad_s"])

    @classmethod
    def zeros(cls, n_steps, dt, omega_max):
        return cls(dt, np.zeros((n_steps, 3)), omega_max)

    @classmethod
    def rectangular(cls, omega, duration, n_steps=1, phase=0.0, omega_max=None):
        steps = np.zeros((n_steps, 3))
        steps[:, 0] = omega * np.cos(phase)
        steps[:, 1] = omega * np.sin(phase)
        return cls(duration / n_steps, steps, abs(omega) if omega_max is None else omega_max)


@dataclass
class ExcitationProfile:
    """Final ``mz`` (starting from +z) over a detuning grid in rad/s."""

    grid: np.ndarray
    mz: np.ndarray

    def __post_init__(self):
        self.grid = check_grid(self.grid)
        self.mz = np.asarray(self.mz, dtype=float)
        if self.mz.shape != self.grid.shape:
            raise GridError("profile length does not match its grid")
        if np.any(np.abs(self.mz) > 1 + 1e-9):
            raise GridError("mz outside [-1, 1]")

    @property
    def detuning_hz(self):
        return self.grid / TWO_PI


def check_grid(values):
    """Validate a detuning grid: at least two strictly increasing points."""
    g = np.asarray(values, dtype=float).ravel()
    if g.size < 2:
        raise GridError("detuning grid needs at least 2 points")
    if not np.all(np.diff(g) > 0):
        raise GridError("detuning grid must be strictly increasing")
    return g


def grid_from_hz(min_hz, max_hz, n):
    return check_grid(TWO_PI * np.linspace(min_hz, max_hz, int(n)))


def rotate(m, v):
    """Rotate vectors ``m`` about ``v`` by the angle ``|v|`` (right-handed).

    Both arrays broadcast over leading axes; the last axis has length 3.
    """
    m, v = np.broadcast_arrays(np.asarray(m, dtype=float), np.asarray(v, dtype=float))
    shape = m.shape
    out = rotate_many(np.ascontiguousarray(m.reshape(-1, 3)),
                      np.ascontiguousarray(v.reshape(-1, 3)))
    return out.reshape(shape)


def step_rotate(state, omega_x, omega_y, delta, dt):
    """Evolve a Bloch vector through one constant-control step.

    Implements ``dm/dt = Omega x m`` with ``Omega = (omega_x, omega_y, delta)``.
    A zero effective field returns the state unchanged.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = np.stack(np.broadcast_arrays(*(np.asarray(a, dtype=float) * dt
                                       for a in (omega_x, omega_y, delta))), axis=-1)
    return rotate(state, v)


def propagate(pulse, extra_detuning=0.0, initial=Z_UP, scale=1.0):
    """Final Bloch vector(s) after ``pulse`` at the given extra detuning(s).

    ``extra_detuning`` may be a scalar or an array; the result has shape
    ``extra_detuning.shape + (3,)``. ``scale`` multiplies both quadratures.
    """
    det = np.asarray(extra_detuning, dtype=float)
    flat = np.ascontiguousarray(det.ravel())
    m0 = np.ascontiguousarray(np.broadcast_to(np.asarray(initial, dtype=float),
                                              (flat.size, 3)))
    sc = np.full(flat.size, float(scale))
    steps = np.ascontiguousarray(pulse.steps)

    def run(sl):
        return propagate_points(steps, pulse.dt, flat[sl], sc[sl], m0[sl])

    out = concat(map_chunks(run, flat.size))
    return out.reshape(det.shape + (3,))


def excitation_profile(pulse, grid, scale=1.0):
    """``mz`` reached from +z at each grid detuning (rad/s)."""
    grid = check_grid(grid)
    mz = propagate(pulse, grid, Z_UP, scale)[:, 2]
    return ExcitationProfile(grid, np.clip(mz, -1.0, 1.0))


def rabi_mz(omega, delta, t):
    """Closed-form ``mz`` after a rectangular pulse starting from +z."""
    w2 = omega * omega + delta * delta
    w = np.sqrt(w2)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(w2 > 0, omega * omega / np.where(w2 > 0, w2, 1.0), 0.0)
    return 1.0 - 2.0 * frac * np.sin(w * t / 2) ** 2


def _trapezoid_weights(x):
    h = np.empty_like(x)
    d = np.diff(x)
    h[0] = d[0] / 2
    h[-1] = d[-1] / 2
    h[1:-1] = (d[:-1] + d[1:]) / 2
    return h


def dephase_profile(profile, t2_star, truncate=5.0):
    """Gaussian inhomogeneous broadening of an excitation profile.

    The excitation ``1 - mz`` is convolved with a normal kernel in detuning
    of standard deviation ``1 / t2_star`` (rad/s), so a free-induction signal
    decays as ``exp(-t**2 / (2 t2_star**2))``. The kernel is cut at
    ``truncate`` standard deviations and renormalised over the grid support
    available at each point.

    Raises
    ------
    GridError
        If any grid spacing exceeds the kernel width.
    """
    if not t2_star > 0:
        raise ValueError("t2_star must be positive")
    sigma = 1.0 / t2_star
    g = profile.grid
    spacing = np.diff(g).max()
    if spacing > sigma:
        raise GridError(
            f"grid spacing {spacing:.4g} rad/s is coarser than the dephasing "
            f"kernel width {sigma:.4g} rad/s"
        )
    exc = 1.0 - profile.mz
    h = _trapezoid_weights(g)
    lo = np.searchsorted(g, g - truncate * sigma, side="left")
    hi = np.searchsorted(g, g + truncate * sigma, side="right")
    out = np.empty_like(exc)
    for i in range(g.size):
        sl = slice(lo[i], hi[i])
        k = np.exp(-0.5 * ((g[sl] - g[i]) / sigma) ** 2) * h[sl]
        out[i] = np.dot(k, exc[sl]) / k.sum()
    return ExcitationProfile(g, np.clip(1.0 - out, -1.0, 1.0))


def fundamental_amplitude(profile, spacing_hz, window_hz=None):
    """Magnitude of the Fourier component of ``1 - mz`` at period ``spacing_hz``.

    For a grating of dips spaced ``spacing_hz`` this is the component that a
    Gaussian broadening attenuates by exactly ``exp(-1/(2 (spacing*T2*)**2))``.
    ``window_hz = (lo, hi)`` restricts the sum to part of the grid.
    """
    f = profile.detuning_hz
    exc = 1.0 - profile.mz
    h = _trapezoid_weights(f)
    if window_hz is not None:
        sel = (f >= window_hz[0]) & (f <= window_hz[1])
        f, exc, h = f[sel], exc[sel], h[sel]
    phase = np.exp(1j * TWO_PI * f / spacing_hz)
    return abs(np.sum(exc * h * phase))
