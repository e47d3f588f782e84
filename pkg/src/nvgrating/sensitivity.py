"""Photon-shot-noise sensitivity of grating spectroscopy.

Grating spacing ``delta`` is in Hz, the gyromagnetic ratio in Hz/T, so the
sensitivity comes out in T/sqrt(Hz) with no 2*pi factors anywhere.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

GAMMA_NV = 28e9  # Hz/T (28 MHz/mT)


@dataclass(frozen=True)
class SensitivityParams:
    c0: float = 0.3
    s0: float = 150e3
    t_readout: float = 300e-9
    t_seq: float = 4100e-9
    t2_star: float = 416e-9
    gamma: float = GAMMA_NV

    def __post_init__(self):
        for name in ("c0", "s0", "t_readout", "t_seq", "t2_star", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.c0 > 1:
            raise ValueError("c0 must lie in (0, 1]")
        if self.t_readout > self.t_seq:
            raise ValueError("t_readout cannot exceed t_seq")

    @property
    def duty_cycle(self):
        return self.t_readout / self.t_seq

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SensitivityCurve:
    spacings: np.ndarray
    eta: np.ndarray


def contrast(delta, params):
    """Fringe contrast ``c0 exp(-1 / (2 delta^2 T2*^2))``."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("grating spacing must be positive")
    return params.c0 * np.exp(-1.0 / (2.0 * (delta * params.t2_star) ** 2))


def fid_contrast(t, params):
    """Gaussian free-induction envelope ``c0 exp(-t^2 / (2 T2*^2))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return params.c0 * np.exp(-(t * t) / (2.0 * params.t2_star ** 2))


def eta(delta, params):
    """Sensitivity in T/sqrt(Hz) at grating spacing ``delta`` (Hz)."""
    delta = np.asarray(delta, dtype=float)
    shot = 1.0 / np.sqrt(params.s0 * params.duty_cycle)
    return delta / contrast(delta, params) * shot / params.gamma


def optimal_spacing(params):
    """Spacing minimising :func:`eta`; analytically ``1 / T2*``."""
    return 1.0 / params.t2_star


def golden_section_min(f, lo, hi, tol=1e-10, max_iter=500):
    """Minimise a unimodal scalar function on ``[lo, hi]``."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_spacing_numeric(params):
    """Golden-section cross-check of :func:`optimal_spacing` in log spacing."""
    d0 = optimal_spacing(params)
    x = golden_section_min(lambda u: float(eta(math.exp(u), params)),
                           math.log(d0 / 10), math.log(d0 * 10))
    return math.exp(x)


def sweep(lo, hi, n, params):
    """Log-spaced sensitivity curve between ``lo`` and ``hi`` Hz."""
    d = np.geomspace(lo, hi, int(n))
    return SensitivityCurve(d, eta(d, params))


def dynamic_range(grating, params):
    """Field span (T) covered by a grating: ``((n-1) spacing + dip width) / gamma``."""
    span = (grating.n_dips - 1) * grating.spacing_hz + grating.dip_width_hz
    return span / params.gamma


def shot_noise_field(delta, params, counts):
    """Per-measurement field noise (T) for ``counts`` detected photons.

    This is the sensitivity model evaluated for a fixed photon budget instead
    of a unit-bandwidth measurement: ``delta / (gamma C(delta) sqrt(counts))``.
    """
    return delta / (params.gamma * contrast(delta, params) * math.sqrt(counts))
