"""Analytic MFM-tip fields seen by a stationary NV sensor.

The sample (tip) scans over a fixed NV. For a scan position ``(x, y)`` the
effective pole sits at ``(x, y, lift) + tip_offset`` and the sensor reads the
field component along its axis plus a bias field.

Two radial pole models are provided: a monopole (``B = q R_hat / R**2``) and
a pseudopole whose field falls off as ``1 / R`` (``B = p R_hat / R``). Only
the radial 1/R law of the pseudopole is modelled, not its angular structure.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

MONOPOLE = "monopole"
PSEUDOPOLE = "pseudopole"
_POWER = {MONOPOLE: 3, PSEUDOPOLE: 2}  # B = S R_vec / R**power


class SingularityError(ValueError):
    pass


@dataclass
class TipFieldModel:
    """``strength`` is q_eff (T m^2) for a monopole, p_eff (T m) for a pseudopole."""

    variant: str
    strength: float
    tip_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.variant not in _POWER:
            raise ValueError(f"unknown tip model {self.variant!r}")
        self.tip_offset = np.asarray(self.tip_offset, dtype=float).reshape(3)
        if not np.isfinite(self.strength):
            raise ValueError("strength must be finite")

    def to_dict(self):
        return {"variant": self.variant, "strength": self.strength,
                "tip_offset_m": self.tip_offset.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], float(d["strength"]), d.get("tip_offset_m", [0, 0, 0]))


@dataclass
class SensorGeometry:
    nv_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    nv_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    bias_field: float = 0.0

    def __post_init__(self):
        self.nv_position = np.asarray(self.nv_position, dtype=float).reshape(3)
        self.nv_axis = np.asarray(self.nv_axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(self.nv_axis) - 1.0) > 1e-12:
            raise ValueError("nv_axis must be a unit vector")

    def to_dict(self):
        return {"nv_position_m": self.nv_position.tolist(), "nv_axis": self.nv_axis.tolist(),
                "bias_field_T": self.bias_field}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("nv_position_m", [0, 0, 0]), d.get("nv_axis", [0, 0, 1]),
                   float(d.get("bias_field_T", 0.0)))


@dataclass
class ScanGrid:
    """Scan window of ``nx`` by ``ny`` pixels centred on ``(x0, y0)``."""

    x_range: float
    y_range: float
    nx: int
    ny: int
    lift_height: float = 0.0
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("scan grid needs at least 2x2 pixels")
        if not (self.x_range > 0 and self.y_range > 0):
            raise ValueError("scan ranges must be positive")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def x(self):
        return self.x0 + np.linspace(-self.x_range / 2, self.x_range / 2, self.nx)

    @property
    def y(self):
        return self.y0 + np.linspace(-self.y_range / 2, self.y_range / 2, self.ny)

    @property
    def pixel_size(self):
        return (self.x_range / (self.nx - 1), self.y_range / (self.ny - 1))

    def positions(self):
        """Pole-carrier positions, shape ``(ny, nx, 3)`` (z is the lift height)."""
        xx, yy = np.meshgrid(self.x, self.y)
        return np.stack([xx, yy, np.full_like(xx, self.lift_height)], axis=-1)

    def to_dict(self):
        return {"x_range_m": self.x_range, "y_range_m": self.y_range, "nx": self.nx,
                "ny": self.ny, "lift_m": self.lift_height, "x0_m": self.x0, "y0_m": self.y0}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["x_range_m"]), float(d["y_range_m"]), int(d["nx"]), int(d["ny"]),
                   float(d.get("lift_m", 0.0)), float(d.get("x0_m", 0.0)),
                   float(d.get("y0_m", 0.0)))


@dataclass
class FieldMap:
    """Per-pixel field projection (T), rows along y. ``mask`` marks valid pixels.

    ``info`` carries optional diagnostics from the producing operation.
    """

    grid: ScanGrid
    b_parallel: np.ndarray
    mask: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.b_parallel = np.asarray(self.b_parallel, dtype=float)
        if self.mask is None:
            self.mask = np.isfinite(self.b_parallel)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.b_parallel.shape != self.grid.shape or self.mask.shape != self.grid.shape:
            raise ValueError("field map dimensions do not match the scan grid")

    def copy(self):
        return FieldMap(self.grid, self.b_parallel.copy(), self.mask.copy(), dict(self.info))


def tip_field_at(model, pole_position, point, eps=1e-9):
    """Field vector (T) of ``model`` with its pole at ``pole_position``.

    Arrays broadcast over leading axes.

    Raises
    ------
    SingularityError
        If any point lies closer than ``eps`` to the pole.
    """
    r = np.asarray(point, dtype=float) - np.asarray(pole_position, dtype=float)
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist < eps):
        raise SingularityError(f"evaluation point within {eps:g} m of the pole")
    return model.strength * r / dist[..., None] ** _POWER[model.variant]


def _projected(variant, strength, rvec, axis):
    """``axis . B`` and its derivatives w.r.t. strength and the separation vector."""
    m = _POWER[variant]
    dist = np.linalg.norm(rvec, axis=-1)
    nr = rvec @ axis
    unit = nr / dist ** m
    d_rvec = strength * (axis / dist[..., None] ** m
                         - (m * nr / dist ** (m + 2))[..., None] * rvec)
    return strength * unit, unit, d_rvec


def field_map(model, geometry, grid, eps=1e-9):
    """Sensor reading over the scan grid; singular pixels are masked out."""
    poles = grid.positions() + model.tip_offset
    rvec = geometry.nv_position - poles
    dist = np.linalg.norm(rvec, axis=-1)
    ok = dist >= eps
    safe = np.where(ok[..., None], rvec, 1.0)
    b, _, _ = _projected(model.variant, model.strength, safe, geometry.nv_axis)
    b = np.where(ok, b + geometry.bias_field, np.nan)
    return FieldMap(grid, b, ok)


def gauss_flux(model, pole_position, center, radius, n_theta=100, n_phi=100):
    """Outward flux of the tip field through a sphere, by product quadrature.

    Gauss-Legendre in ``cos(theta)`` times the periodic trapezoid rule in
    ``phi``; ``n_theta * n_phi`` field evaluations.
    """
    u, wu = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * (2 * np.pi / n_phi)
    uu, pp = np.meshgrid(u, phi, indexing="ij")
    st = np.sqrt(1 - uu ** 2)
    normal = np.stack([st * np.cos(pp), st * np.sin(pp), uu], axis=-1)
    pts = np.asarray(center, dtype=float) + radius * normal
    b = tip_field_at(model, pole_position, pts)
    integrand = np.sum(b * normal, axis=-1) * radius ** 2
    return float(np.sum(wu[:, None] * integrand) * (2 * np.pi / n_phi))


@dataclass
class TipFit:
    model: TipFieldModel
    bias: float
    rms_residual: float
    converged: bool
    n_evaluations: int
    message: str = ""


_LENGTH = 1e-7  # offset scale for conditioning (m)
_FIELD = 1e-3  # bias scale (T)


def _unpack(p, s_scale):
    return p[0] * s_scale, p[1:4] * _LENGTH, p[4] * _FIELD


def tip_residuals(p, variant, s_scale, poles, geometry, observed):
    strength, offset, bias = _unpack(p, s_scale)
    rvec = geometry.nv_position - (poles + offset)
    b, _, _ = _projected(variant, strength, rvec, geometry.nv_axis)
    return b + bias - observed


def tip_jacobian(p, variant, s_scale, poles, geometry, observed):
    """Analytic Jacobian of :func:`tip_residuals` in the scaled parameters."""
    strength, offset, bias = _unpack(p, s_scale)
    rvec = geometry.nv_position - (poles + offset)
    _, unit, d_rvec = _projected(variant, strength, rvec, geometry.nv_axis)
    jac = np.empty((len(observed), 5))
    jac[:, 0] = unit * s_scale
    jac[:, 1:4] = -d_rvec * _LENGTH
    jac[:, 4] = _FIELD
    return jac


def fit_tip_model(observed, variant, geometry, init, init_bias=None, max_nfev=2000):
    """Least-squares fit of strength, tip offset and bias to a field map.

    Levenberg-Marquardt (MINPACK) with the analytic Jacobian. Only valid
    pixels enter. On hitting ``max_nfev`` the best iterate is returned with
    ``converged=False``.
    """
    valid = observed.mask & np.isfinite(observed.b_parallel)
    if valid.sum() < 10:
        raise ValueError("need at least 10 valid pixels to fit a tip model")
    poles = observed.grid.positions()[valid]
    obs = observed.b_parallel[valid]
    s_scale = abs(init.strength) if init.strength != 0 else 1.0
    bias0 = geometry.bias_field if init_bias is None else init_bias
    p0 = np.concatenate([[init.strength / s_scale], init.tip_offset / _LENGTH,
                         [bias0 / _FIELD]])
    args = (variant, s_scale, poles, geometry, obs)
    res = least_squares(tip_residuals, p0, jac=tip_jacobian, args=args, method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    strength, offset, bias = _unpack(res.x, s_scale)
    rms = float(np.sqrt(np.mean(res.fun ** 2)))
    return TipFit(TipFieldModel(variant, strength, offset), float(bias), rms,
                  bool(res.status > 0), int(res.nfev), res.message)
