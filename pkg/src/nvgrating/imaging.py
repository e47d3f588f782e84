"""Fringe images: forward simulation from field maps and inversion back to fields.

Internally all inversions work in detuning (Hz), ``delta = gamma * b - carrier``,
and convert back to tesla at the end.
"""

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .bloch import check_grid, dephase_profile
from .fieldmodel import FieldMap
from .sensitivity import GAMMA_NV

_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))
_RESIDUAL_FLOOR = 1e-14  # fluorescence misfit treated as exact
_CLEAR_MARGIN = 2.0  # runner-up candidate must be this many times farther away


class AnchorError(ValueError):
    pass


@dataclass
class ResponseCurve:
    """Expected normalised fluorescence versus detuning (Hz).

    Piecewise linear between grid nodes; undefined (NaN) outside the grid,
    which is taken as the bandwidth of the spectroscopy pulse.
    """

    detuning_hz: np.ndarray
    values: np.ndarray
    c0: float = 0.3
    spacing_hz: Optional[float] = None
    gamma: float = GAMMA_NV

    def __post_init__(self):
        self.detuning_hz = check_grid(self.detuning_hz)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.detuning_hz.shape:
            raise ValueError("response values do not match the detuning grid")
        self.slope = np.diff(self.values) / np.diff(self.detuning_hz)
        self._h = 1e-3 * float(np.diff(self.detuning_hz).min())

    @property
    def bandwidth(self):
        return float(self.detuning_hz[0]), float(self.detuning_hz[-1])

    @property
    def depth(self):
        return float(1.0 - self.values.min())

    def in_band(self, delta):
        lo, hi = self.bandwidth
        delta = np.asarray(delta, dtype=float)
        return (delta >= lo) & (delta <= hi)

    def __call__(self, delta):
        delta = np.asarray(delta, dtype=float)
        out = np.interp(delta, self.detuning_hz, self.values)
        return np.where(self.in_band(delta), out, np.nan)

    def derivative(self, delta):
        """Centred finite difference with a step well below the grid spacing.

        One-sided at the band edges.
        """
        delta = np.asarray(delta, dtype=float)
        lo, hi = self.bandwidth
        up = np.minimum(delta + self._h, hi)
        dn = np.maximum(delta - self._h, lo)
        out = (np.interp(up, self.detuning_hz, self.values)
               - np.interp(dn, self.detuning_hz, self.values)) / (up - dn)
        return np.where(self.in_band(delta), out, np.nan)

    def dip_centers(self, fraction=0.5):
        """Detunings of local minima at least ``fraction`` of the full depth deep."""
        v = self.values
        inner = (v[1:-1] < v[:-2]) & (v[1:-1] <= v[2:])
        idx = np.flatnonzero(inner) + 1
        idx = idx[1.0 - v[idx] >= fraction * self.depth]
        return self.detuning_hz[idx]

    def shifted(self, shift_hz):
        return ResponseCurve(self.detuning_hz + shift_hz, self.values.copy(), self.c0,
                             self.spacing_hz, self.gamma)

    def level_set(self, level, tol):
        """Detuning intervals where ``|response - level| <= tol``, merged and sorted."""
        r0, r1 = self.values[:-1], self.values[1:]
        g0, g1 = self.detuning_hz[:-1], self.detuning_hz[1:]
        dr = r1 - r0
        flat = dr == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (level - tol - r0) / dr
            tb = (level + tol - r0) / dr
        t_lo = np.where(flat, 0.0, np.minimum(ta, tb))
        t_hi = np.where(flat, 1.0, np.maximum(ta, tb))
        keep = np.where(flat, np.abs(r0 - level) <= tol, (t_lo <= 1.0) & (t_hi >= 0.0))
        t_lo = np.clip(t_lo[keep], 0.0, 1.0)
        t_hi = np.clip(t_hi[keep], 0.0, 1.0)
        w = (g1 - g0)[keep]
        return _merge(g0[keep] + t_lo * w, g0[keep] + t_hi * w)


def _merge(a, b):
    if a.size <= 1:
        return a, b
    reach = np.maximum.accumulate(b)
    start = np.concatenate([[True], a[1:] > reach[:-1]])
    idx = np.flatnonzero(start)
    ends = np.append(idx[1:], a.size) - 1
    return a[idx], reach[ends]


def _intersect(sa, sb):
    (a1, b1), (a2, b2) = sa, sb
    if a1.size == 0 or a2.size == 0:
        return a1[:0], b1[:0]
    lo = np.maximum(a1[:, None], a2[None, :]).ravel()
    hi = np.minimum(b1[:, None], b2[None, :]).ravel()
    keep = lo <= hi
    order = np.argsort(lo[keep], kind="stable")
    return lo[keep][order], hi[keep][order]


def _nearest(intervals, p):
    a, b = intervals
    if a.size == 0:
        return None
    c = np.clip(p, a, b)
    return float(c[np.argmin(np.abs(c - p))])


def build_response(profile, t2_star, c0, spacing_hz=None, gamma=GAMMA_NV):
    """Fluorescence response ``1 - c0 (1 - mz_dephased) / 2`` of a profile.

    ``t2_star = inf`` skips dephasing.
    """
    if not 0 < c0 <= 1:
        raise ValueError("c0 must lie in (0, 1]")
    prof = profile if math.isinf(t2_star) else dephase_profile(profile, t2_star)
    values = 1.0 - c0 * (1.0 - prof.mz) / 2.0
    return ResponseCurve(prof.detuning_hz, values, c0, spacing_hz, gamma)


@dataclass
class FringeImage:
    grid: object
    fluorescence: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.fluorescence = np.asarray(self.fluorescence, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.fluorescence.shape != self.grid.shape or self.mask.shape != self.grid.shape:
            raise ValueError("image dimensions do not match the scan grid")
        if np.any(self.fluorescence[self.mask] < 0) or not np.all(
                np.isfinite(self.fluorescence[self.mask])):
            raise ValueError("valid pixels need finite non-negative fluorescence")


@dataclass
class PoissonNoise:
    s0: float
    dwell: float

    @property
    def counts(self):
        return self.s0 * self.dwell


@dataclass
class Anchor:
    px: int
    py: int
    b_tesla: float


@dataclass
class ReconstructionConfig:
    smoothness_weight: float = 0.0  # 1/T^2, multiplies sum of squared neighbour differences
    seed_anchors: list = field(default_factory=list)
    carrier_offset: float = 0.0  # Hz
    max_iterations: int = 200
    convergence_tol: float = 1e-12
    noise_model: Optional[PoissonNoise] = None
    assign_tolerance: Optional[float] = None
    info_tolerance: float = 1e-2  # low-information threshold, relative to max |slope|

    def __post_init__(self):
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be non-negative")
        self.seed_anchors = [a if isinstance(a, Anchor) else Anchor(*a) if not isinstance(a, dict)
                             else Anchor(int(a["px"]), int(a["py"]), float(a["b_tesla"]))
                             for a in self.seed_anchors]
        if isinstance(self.noise_model, dict):
            self.noise_model = PoissonNoise(float(self.noise_model["s0"]),
                                            float(self.noise_model["dwell"]))

    def tolerance(self):
        if self.assign_tolerance is not None:
            return self.assign_tolerance
        if self.noise_model is None:
            return 1e-9
        return 2.0 / math.sqrt(self.noise_model.counts)

    def to_dict(self):
        d = asdict(self)
        d["noise_model"] = None if self.noise_model is None else asdict(self.noise_model)
        return d

    @classmethod
    def from_dict(cls, d):
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in keys})


def _delta(b, response, config):
    return response.gamma * b - config.carrier_offset


def _field(delta, response, config):
    return (delta + config.carrier_offset) / response.gamma


def _pixel_noise(seed, index, lam):
    # Counter-based stream per pixel: the pixel index occupies a counter word
    # of its own, so draws never overlap and do not depend on evaluation order.
    bg = np.random.Philox(key=int(seed), counter=[0, int(index), 0, 0])
    return np.random.Generator(bg).poisson(lam)


def simulate_scan(field_map, response, config, seed=0):
    """Fluorescence image of a field map; out-of-band pixels are masked."""
    delta = _delta(field_map.b_parallel, response, config)
    valid = field_map.mask & np.isfinite(delta) & response.in_band(np.nan_to_num(delta))
    fl = np.full(delta.shape, np.nan)
    fl[valid] = response(delta[valid])
    if config.noise_model is not None:
        n = config.noise_model.counts
        if not n > 0:
            raise ValueError("noise model needs a positive photon budget")
        flat = fl.ravel()
        for i in np.flatnonzero(valid.ravel()):
            flat[i] = _pixel_noise(seed, i, n * flat[i]) / n
        fl = flat.reshape(delta.shape)
    return FringeImage(field_map.grid, fl, valid)


def _predict(delta, assigned, reliable, j, i, ny, nx):
    trend, plain, weak = [], [], []
    for dj, di in _NEIGHBORS:
        jn, in_ = j + dj, i + di
        if not (0 <= jn < ny and 0 <= in_ < nx and assigned[jn, in_]):
            continue
        if not reliable[jn, in_]:
            weak.append(delta[jn, in_])
            continue
        jj, ii = jn + dj, in_ + di
        if 0 <= jj < ny and 0 <= ii < nx and reliable[jj, ii]:
            trend.append(2.0 * delta[jn, in_] - delta[jj, ii])
        else:
            plain.append(delta[jn, in_])
    # quality 2: linear extrapolation, 1: neighbour value, 0: unreliable neighbours only
    for vals, quality in ((trend, 2), (plain, 1), (weak, 0)):
        if vals:
            return sum(vals) / len(vals), quality


def _pick(intervals, p):
    """Candidate nearest ``p`` and whether it beats every other by a clear margin."""
    a, b = intervals
    if a.size == 0:
        return None, False
    c = np.clip(p, a, b)
    dist = np.abs(c - p)
    k = int(np.argmin(dist))
    if a.size == 1:
        return float(c[k]), True
    second = np.partition(dist, 1)[1]
    return float(c[k]), bool(second >= _CLEAR_MARGIN * dist[k])


def _flood(valid, seeds, candidates, band):
    """Continuity fill from assigned seeds over ``valid`` pixels.

    Each newly reached pixel takes the candidate detuning nearest to the
    linear extrapolation from its assigned neighbours (plain neighbour value
    where no second pixel is available). A pixel whose prediction falls
    almost midway between two candidates (next to a response extremum,
    where the two flanks meet) is marked unreliable and is not used for
    later extrapolation, so a mirror-flank pick cannot propagate. A pixel
    reached only through unreliable neighbours goes once more to the back
    of the queue, as does one reached without a linear trend, so that a
    better-supported prediction can form first. FIFO frontier, fixed neighbour order.
    """
    ny, nx = valid.shape
    delta = np.full(valid.shape, np.nan)
    assigned = np.zeros(valid.shape, dtype=bool)
    reliable = np.zeros(valid.shape, dtype=bool)
    visited = np.zeros(valid.shape, dtype=bool)
    deferred = np.zeros(valid.shape, dtype=bool)
    queue = deque()

    def visit(j, i):
        for dj, di in _NEIGHBORS:
            jn, in_ = j + dj, i + di
            if 0 <= jn < ny and 0 <= in_ < nx and valid[jn, in_] and not visited[jn, in_]:
                visited[jn, in_] = True
                queue.append((jn, in_))

    for (j, i), d in seeds:
        delta[j, i] = d
        assigned[j, i] = reliable[j, i] = visited[j, i] = True
    for (j, i), _ in seeds:
        visit(j, i)
    while queue:
        j, i = queue.popleft()
        pred, quality = _predict(delta, assigned, reliable, j, i, ny, nx)
        if quality < 2 and not deferred[j, i]:
            deferred[j, i] = True
            queue.append((j, i))
            continue
        d, clear = _pick(candidates(j, i), pred)
        delta[j, i] = min(max(pred, band[0]), band[1]) if d is None else d
        assigned[j, i] = True
        reliable[j, i] = clear and quality > 0
        visit(j, i)
    return delta, assigned


def assign_fringes(image, response, config):
    """Initial field guess by continuity unwrapping from seed anchors.

    Valid regions not connected to any anchor are masked out; their count is
    reported in ``info["unanchored_regions"]``.
    """
    tol = config.tolerance()
    fl = image.fluorescence
    anchors = [a for a in config.seed_anchors
               if 0 <= a.py < image.grid.ny and 0 <= a.px < image.grid.nx and image.mask[a.py, a.px]]
    if not anchors:
        raise AnchorError("no seed anchor lies on a valid pixel")

    def candidates(j, i):
        return response.level_set(fl[j, i], tol)

    seeds = []
    for a in anchors:
        d0 = float(_delta(a.b_tesla, response, config))
        d = _nearest(candidates(a.py, a.px), d0)
        seeds.append(((a.py, a.px), d0 if d is None else d))
    delta, assigned = _flood(image.mask, seeds, candidates, response.bandwidth)
    orphan = image.mask & ~assigned
    n_orphan = int(ndimage.label(orphan)[1]) if orphan.any() else 0
    b = np.where(assigned, _field(delta, response, config), np.nan)
    return FieldMap(image.grid, b, assigned, {"unanchored_regions": n_orphan})


def _edges(valid):
    idx = -np.ones(valid.shape, dtype=np.int64)
    idx[valid] = np.arange(valid.sum())
    pairs = []
    for a, b in ((idx[:-1, :], idx[1:, :]), (idx[:, :-1], idx[:, 1:])):
        ok = (a >= 0) & (b >= 0)
        pairs.append(np.stack([a[ok], b[ok]], axis=1))
    return np.concatenate(pairs)


def _laplacian(edges, n):
    i, j = edges[:, 0], edges[:, 1]
    d = sparse.coo_matrix((np.ones(len(edges)), (i, j)), shape=(n, n))
    adj = (d + d.T).tocsr()
    return (sparse.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsc()


def reconstruct(image, response, initial, config):
    """Refine a field map by damped Gauss-Newton on the fluorescence misfit.

    Minimises ``sum (F - response(delta))**2 + lam * sum_edges (b_i - b_j)**2``.
    Steps are only accepted when they do not increase the objective. With
    ``lam = 0`` the pixels decouple and each carries its own damping.

    ``info`` holds ``objective`` (per accepted iteration), ``converged``,
    ``iterations``, ``low_information`` and ``residual`` maps.
    """
    valid = image.mask & initial.mask & np.isfinite(initial.b_parallel)
    fl = image.fluorescence[valid]
    x = _delta(initial.b_parallel[valid], response, config)
    lo, hi = response.bandwidth
    x = np.clip(x, lo, hi)
    lam = config.smoothness_weight / response.gamma ** 2
    xtol = config.convergence_tol * (hi - lo)
    flat_slope = 1e-6 * np.abs(response.slope).max()
    n = x.size

    if lam > 0:
        edges = _edges(valid)
        lap = _laplacian(edges, n)

    def objective(x):
        r = fl - response(x)
        val = r * r
        if lam > 0:
            dx = x[edges[:, 0]] - x[edges[:, 1]]
            return float(val.sum() + lam * np.dot(dx, dx)), r, val
        return float(val.sum()), r, val

    obj, r, per = objective(x)
    history = [obj]
    converged = n == 0 or float(np.abs(r).max()) <= _RESIDUAL_FLOOR
    mu = None
    it = 0
    while not converged and it < config.max_iterations:
        it += 1
        jac = response.derivative(x)
        jj = jac * jac
        scale = max(float(jj.mean()), 1e-300)
        if lam == 0:
            if mu is None:
                mu = np.full(n, 1e-3 * scale)
            step = jac * r / (jj + mu)
            xt = np.clip(x + step, lo, hi)
            rt = fl - response(xt)
            pt = rt * rt
            ok = pt < per
            x = np.where(ok, xt, x)
            r = np.where(ok, rt, r)
            per = np.where(ok, pt, per)
            mu = np.where(ok, mu / 3.0, mu * 4.0)
            prev, obj = obj, float(per.sum())
            history.append(obj)
            # a pixel is done when exact, stationary (flat response) or no longer moving
            done = ((np.abs(r) <= _RESIDUAL_FLOOR) | (np.abs(jac) <= flat_slope)
                    | (np.abs(step) <= xtol))
            converged = bool(done.all()) or (ok.all() and prev - obj <= config.convergence_tol * prev)
        else:
            if mu is None:
                mu = 1e-3 * scale
            grad = jac * r - lam * (lap @ x)
            while True:
                h = sparse.diags(jj + mu) + lam * lap
                step = spsolve(h.tocsc(), grad)
                xt = np.clip(x + step, lo, hi)
                ot, rt, pt = objective(xt)
                if ot <= obj:
                    x, r, per, obj = xt, rt, pt, ot
                    mu /= 3.0
                    break
                mu *= 4.0
                if mu > 1e20 * scale:
                    break
            converged = (float(np.abs(r).max()) <= _RESIDUAL_FLOOR
                         or float(np.abs(step).max()) <= xtol or mu > 1e20 * scale
                         or history[-1] - obj <= config.convergence_tol * history[-1])
            history.append(obj)
    slope = np.abs(response.derivative(x))
    low = np.zeros(valid.shape, dtype=bool)
    low[valid] = slope < config.info_tolerance * np.abs(response.slope).max()
    resid = np.full(valid.shape, np.nan)
    resid[valid] = r
    b = np.full(valid.shape, np.nan)
    b[valid] = _field(x, response, config)
    info = {"objective": history, "converged": bool(converged), "iterations": it,
            "low_information": low, "residual": resid}
    return FieldMap(image.grid, b, valid, info)


def disambiguate_shifted(image_a, image_b, response_a, response_b, shift, config):
    """Anchor-free fringe assignment from two images with shifted gratings.

    Each pixel's candidates must explain both images at once, which fixes
    the side of every dip a pixel sits on, i.e. the local sign of the field
    gradient. The leftover ambiguity is a whole number of grating periods per
    connected region; it is settled by the data misfit over the finite
    grating, with every candidate offset required to stay inside both
    bandwidths.
    """
    spacing = response_a.spacing_hz
    if spacing is None:
        raise ValueError("response_a needs its grating spacing")
    if not 0 < shift < spacing:
        raise ValueError(f"shift must lie strictly between 0 and the spacing {spacing:g} Hz")
    tol = config.tolerance()
    fa, fb = image_a.fluorescence, image_b.fluorescence
    valid = image_a.mask & image_b.mask
    band = (max(response_a.bandwidth[0], response_b.bandwidth[0]),
            min(response_a.bandwidth[1], response_b.bandwidth[1]))

    def candidates(j, i):
        return _intersect(response_a.level_set(fa[j, i], tol),
                          response_b.level_set(fb[j, i], tol))

    labels, n_regions = ndimage.label(valid)
    delta = np.full(valid.shape, np.nan)
    assigned = np.zeros(valid.shape, dtype=bool)
    offsets = []
    depth = np.minimum(1.0 - fa, 1.0 - fb)
    for region in range(1, n_regions + 1):
        sel = labels == region
        score = np.where(sel, depth, -np.inf)
        order = np.argsort(-score, axis=None, kind="stable")
        seed = None
        for flat in order[: min(sel.sum(), 64)]:
            j, i = np.unravel_index(flat, valid.shape)
            c = candidates(j, i)
            if c[0].size:
                seed = ((j, i), float(c[0][0]))
                break
        if seed is None:
            continue
        d, ok = _flood(sel, [seed], candidates, band)
        k_best, best = None, np.inf
        kmax = int(math.ceil((band[1] - band[0]) / spacing)) + 1
        for k in range(-kmax, kmax + 1):
            dk = d[ok] + k * spacing
            if dk.min() < band[0] or dk.max() > band[1]:
                continue
            mis = float(np.sum((fa[ok] - response_a(dk)) ** 2 + (fb[ok] - response_b(dk)) ** 2))
            if mis < best:
                k_best, best = k, mis
        if k_best is None:
            continue
        delta[ok] = d[ok] + k_best * spacing
        assigned |= ok
        offsets.append(k_best)
    b = np.where(assigned, _field(delta, response_a, config), np.nan)
    return FieldMap(image_a.grid, b, assigned, {"branch_offsets": offsets})


def subtract_bias(field_map, bias):
    out = field_map.copy()
    out.b_parallel[out.mask] -= bias
    return out


def fringe_pixels(image, response, fraction=0.2):
    """Valid pixels darkened by at least ``fraction`` of the response depth."""
    dark = np.zeros(image.mask.shape, dtype=bool)
    dark[image.mask] = (1.0 - image.fluorescence[image.mask]) >= fraction * response.depth
    return dark


def dark_regions(image, response, fraction=0.5):
    """Number of 8-connected dark regions in an image."""
    dark = fringe_pixels(image, response, fraction)
    return int(ndimage.label(dark, structure=np.ones((3, 3)))[1])


def count_fringes(field_map, response, config, fraction=0.5):
    """Number of grating dips whose fringe a field map crosses.

    A dip counts when its detuning lies inside the range spanned by the
    map's valid pixels. Unlike counting dark regions, this does not depend
    on rings being resolved as connected pixel sets.
    """
    sel = field_map.mask & np.isfinite(field_map.b_parallel)
    if not sel.any():
        return 0
    d = _delta(field_map.b_parallel[sel], response, config)
    centers = response.dip_centers(fraction)
    return int(np.sum((centers > d.min()) & (centers < d.max())))


def fringe_displacement(image_a, image_b):
    """Per-pixel displacement (pixels, ``(dy, dx)``) taking fringes of a onto b.

    First-order estimate ``(F_a - F_b) grad F_a / |grad F_a|^2``. For a
    grating shifted up in detuning, it points along increasing detuning.
    """
    fa = np.where(image_a.mask, image_a.fluorescence, np.nan)
    fb = np.where(image_b.mask, image_b.fluorescence, np.nan)
    gy, gx = np.gradient(fa)
    g2 = gx * gx + gy * gy
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(g2 > 0, (fa - fb) / g2, np.nan)
    return np.stack([w * gy, w * gx], axis=-1)


def ring_radii(image, response, center, fraction=0.3, bin_px=0.5):
    """Radii (pixels) of dark rings about ``center = (py, px)``, inner first.

    Darkness ``1 - F`` is averaged in radial bins; each run of bins above
    ``fraction`` of the response depth is one ring, located at its
    darkness-weighted mean radius.
    """
    yy, xx = np.indices(image.mask.shape)
    rr = np.hypot(yy - center[0], xx - center[1])[image.mask]
    dark = 1.0 - image.fluorescence[image.mask]
    nb = int(rr.max() / bin_px) + 1
    k = np.minimum((rr / bin_px).astype(int), nb - 1)
    count = np.bincount(k, minlength=nb)
    prof = np.bincount(k, weights=dark, minlength=nb) / np.maximum(count, 1)
    centers = (np.arange(nb) + 0.5) * bin_px
    above = (prof >= fraction * response.depth) & (count > 0)
    labels, n = ndimage.label(above)
    radii = [np.sum(centers[labels == i] * prof[labels == i]) / np.sum(prof[labels == i])
             for i in range(1, n + 1)]
    return np.asarray(radii, dtype=float)


def find_missing_dip(image, response, n_dips, center, increasing_inward=True,
                     fraction=0.3, degree=2):
    """Index of the grating dip whose fringe is missing on a radial field.

    Fringe order is a smooth function of ring radius. Each possible gap
    position gives an order sequence that skips one value; the sequence
    best fitted by a degree-``degree`` polynomial in radius marks the
    double-width gap. Rings are matched to dips assuming every present dip
    produces exactly one ring; ``increasing_inward`` states whether the
    detuning grows towards ``center``.
    """
    radii = ring_radii(image, response, center, fraction)
    n = radii.size
    if n != n_dips - 1:
        raise ValueError(f"expected {n_dips - 1} rings, found {n}")
    if n < degree + 2:
        raise ValueError("too few rings to locate a gap")
    scale = radii.max()
    cost = []
    for j in range(n - 1):
        order = np.arange(n) + (np.arange(n) > j)
        coef = np.polyfit(radii / scale, order, degree)
        cost.append(float(np.sum((np.polyval(coef, radii / scale) - order) ** 2)))
    j = int(np.argmin(cost))
    # gap j lies between ring j and ring j+1 counted from the centre
    return n_dips - 2 - j if increasing_inward else j + 1
