"""Online directional stiffness estimation and map gridding.

A sinusoidal force reference palpates the tissue; each cycle a line is fit
to the probe motion, positions and applied forces are projected onto the
fitted direction, and the least-squares slope of force against depth is the
directional stiffness for that cycle.  Scattered cycle estimates are
gridded into a smooth map by penalized least squares.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


@dataclass
class ExcitationParams:
    amplitude: float = 1.8   # N
    bias: float = 0.65       # N
    frequency: float = 2.0   # Hz
    # floor on the commanded normal force; keeps the probe loaded through
    # the sinusoid trough so the contact latch (release at 0.25 N) holds
    # even with the tracking undershoot at the clamp corner
    min_force: float = 0.5   # N

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.frequency <= 0:
            raise ValueError("frequency must be > 0")


def sinusoid_reference(t, prm):
    """Commanded normal force (N) at time t: bias + amplitude*sin(2*pi*f*t),
    clamped below at prm.min_force (never tensile)."""
    raw = prm.bias + prm.amplitude * math.sin(2.0 * math.pi * prm.frequency * t)
    return max(raw, prm.min_force)


@dataclass
class StiffnessSample:
    location: tuple    # (x, y) mm, window mean projected to the surface
    kappa: float       # N/mm
    timestamp: float   # s

    def __post_init__(self):
        if not math.isfinite(self.kappa):
            raise ValueError("kappa must be finite")


def fit_motion_direction(positions):
    """Principal direction and mean of a probe position cloud.

    Returns (u_hat, mu_p) with u_hat the first principal component of the
    centered cloud, sign-normalized to point into the tissue (u.z <= 0).
    Returns None for a degenerate cloud (principal spread < 0.01 mm).
    """
    pts = np.asarray(positions, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 8 or pts.shape[1] != 3:
        raise ValueError("need at least 8 probe positions")
    mu = pts.mean(axis=0)
    centered = pts - mu
    # principal axis via SVD of the centered cloud
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    spread = s[0] / math.sqrt(len(pts))  # std along the principal axis
    if spread < 0.01:
        return None
    u = vt[0]
    if u[2] > 0 or (u[2] == 0 and (u[0] < 0 or (u[0] == 0 and u[1] < 0))):
        u = -u
    return u, mu


def palpation_depths(positions, u_hat, mu_p):
    """Per-sample palpation depth: (p_i - mu_p) . u_hat (mm)."""
    return (np.asarray(positions, dtype=float) - mu_p) @ u_hat


def projected_forces(forces, u_hat):
    """Per-sample force projection f_i . u_hat (N); forces are the probe-on-
    tissue interaction forces so the slope against depth comes out positive."""
    return np.asarray(forces, dtype=float) @ u_hat


def estimate_stiffness(depths, w, min_pairs=8, min_spread=0.05):
    """Ordinary least-squares slope of projected force against depth (N/mm).

    Returns None when the cycle is unusable: fewer than min_pairs samples or
    depth range below min_spread mm.
    """
    d = np.asarray(depths, dtype=float)
    w = np.asarray(w, dtype=float)
    if d.size != w.size:
        raise ValueError("depths and forces must match in length")
    if d.size < min_pairs:
        return None
    if d.max() - d.min() <= min_spread:
        return None
    dc = d - d.mean()
    return float(np.dot(dc, w) / np.dot(dc, dc))


class CycleEstimator:
    """Sliding-window cycle estimator fed from the 1 kHz state stream.

    window is one excitation period of samples, sliding by half a period;
    mu_window (250) positions define the depth reference mean.  Windows with
    more than max_drift mm of lateral travel are rejected as non-stationary
    (repositioning moves corrupt the direction fit).
    """

    def __init__(self, window=500, slide=250, mu_window=250,
                 min_pairs=8, min_spread=0.05, max_drift=2.0):
        self.window = int(window)
        self.slide = int(slide)
        self.mu_window = int(mu_window)
        self.min_pairs = min_pairs
        self.min_spread = min_spread
        self.max_drift = max_drift
        self._pos = np.zeros((self.window, 3))
        self._force = np.zeros((self.window, 3))
        self._n = 0
        self._since_fit = 0

    def clear(self):
        self._n = 0
        self._since_fit = 0

    def push(self, p, f_applied, t):
        """Add one in-contact sample; returns a StiffnessSample when a full
        window is available at the slide cadence, else None."""
        if self._n == self.window:
            self._pos[:-1] = self._pos[1:]
            self._force[:-1] = self._force[1:]
            self._pos[-1] = p
            self._force[-1] = f_applied
        else:
            self._pos[self._n] = p
            self._force[self._n] = f_applied
            self._n += 1
        self._since_fit += 1
        if self._n < self.window or self._since_fit < self.slide:
            return None
        self._since_fit = 0
        return self._fit(t)

    def _fit(self, t):
        pos = self._pos
        drift = math.hypot(pos[:, 0].max() - pos[:, 0].min(),
                           pos[:, 1].max() - pos[:, 1].min())
        if drift > self.max_drift:
            return None
        fit = fit_motion_direction(pos)
        if fit is None:
            return None
        u_hat, _ = fit
        mu_p = pos[-self.mu_window:].mean(axis=0)
        d = palpation_depths(pos, u_hat, mu_p)
        w = projected_forces(self._force, u_hat)
        kappa = estimate_stiffness(d, w, self.min_pairs, self.min_spread)
        if kappa is None:
            return None
        return StiffnessSample(location=(mu_p[0], mu_p[1]), kappa=kappa,
                               timestamp=t)


@dataclass
class PalpationWindow:
    """Snapshot of one regression window (kept for logging/inspection)."""
    positions: np.ndarray
    forces: np.ndarray
    mu_p: np.ndarray
    u_hat: np.ndarray


# --- map gridding ---------------------------------------------------------

_REG_CACHE = {}


def _regularizers(nx, ny, grad_frac):
    """Squared Laplacian plus a small squared-gradient term (sparse)."""
    key = (nx, ny, grad_frac)
    hit = _REG_CACHE.get(key)
    if hit is not None:
        return hit

    def idx(ix, iy):
        return iy * nx + ix

    n = nx * ny
    rows, cols, vals = [], [], []
    r = 0
    for iy in range(1, ny - 1):
        for ix in range(1, nx - 1):
            rows += [r] * 5
            cols += [idx(ix, iy), idx(ix - 1, iy), idx(ix + 1, iy),
                     idx(ix, iy - 1), idx(ix, iy + 1)]
            vals += [-4.0, 1.0, 1.0, 1.0, 1.0]
            r += 1
    lap = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))

    rows, cols, vals = [], [], []
    r = 0
    for iy in range(ny):
        for ix in range(nx - 1):
            rows += [r, r]
            cols += [idx(ix, iy), idx(ix + 1, iy)]
            vals += [-1.0, 1.0]
            r += 1
    for iy in range(ny - 1):
        for ix in range(nx):
            rows += [r, r]
            cols += [idx(ix, iy), idx(ix, iy + 1)]
            vals += [-1.0, 1.0]
            r += 1
    grad = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))

    reg = (lap.T @ lap + grad_frac * (grad.T @ grad)).tocsc()
    _REG_CACHE[key] = reg
    return reg


@dataclass
class StiffnessMap:
    """Gridded, smoothed stiffness surface over the palpated region."""
    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int
    values: np.ndarray = None           # (ny, nx) N/mm
    smoothness: float = 1e-2            # Laplacian penalty weight
    grad_frac: float = 0.05             # gradient penalty, fraction of smoothness
    n_samples: int = 0
    explored: np.ndarray = None         # (ny, nx) nodes with nearby samples
    explore_radius: float = 1.5         # mm, node-to-sample support distance

    @classmethod
    def over_box(cls, b_min, b_max, step=2.0, smoothness=1e-2, grad_frac=0.05):
        nx = int(round((b_max[0] - b_min[0]) / step)) + 1
        ny = int(round((b_max[1] - b_min[1]) / step)) + 1
        return cls(x0=float(b_min[0]), y0=float(b_min[1]), dx=step, dy=step,
                   nx=nx, ny=ny, smoothness=smoothness, grad_frac=grad_frac)

    def node_xy(self):
        xs = self.x0 + self.dx * np.arange(self.nx)
        ys = self.y0 + self.dy * np.arange(self.ny)
        return xs, ys

    def argmin_xy(self, explored_only=True):
        """Grid node of the map minimum.

        By default the search is restricted to explored nodes (those within
        explore_radius of some sample): outside them the smoothed surface
        is pure extrapolation and can undershoot the data.
        """
        if self.values is None:
            raise ValueError("map has no fitted values yet")
        vals = self.values
        if explored_only and self.explored is not None:
            masked = np.where(self.explored, vals, np.inf)
            iy, ix = np.unravel_index(np.argmin(masked), masked.shape)
        else:
            iy, ix = np.unravel_index(np.argmin(vals), vals.shape)
        return (self.x0 + ix * self.dx, self.y0 + iy * self.dy)

    def argmin_refined(self):
        """Sub-cell minimum location: 1D parabola through the argmin node
        and its neighbors along each axis (what a viewer reads off the
        smoothly colored display)."""
        ax, ay = self.argmin_xy()
        ix = int(round((ax - self.x0) / self.dx))
        iy = int(round((ay - self.y0) / self.dy))
        v = self.values
        x_ref, y_ref = ax, ay
        if 0 < ix < self.nx - 1:
            y0, y1, y2 = v[iy, ix - 1], v[iy, ix], v[iy, ix + 1]
            denom = y0 - 2 * y1 + y2
            if denom > 1e-12:
                x_ref = ax + self.dx * np.clip(0.5 * (y0 - y2) / denom, -1, 1)
        if 0 < iy < self.ny - 1:
            y0, y1, y2 = v[iy - 1, ix], v[iy, ix], v[iy + 1, ix]
            denom = y0 - 2 * y1 + y2
            if denom > 1e-12:
                y_ref = ay + self.dy * np.clip(0.5 * (y0 - y2) / denom, -1, 1)
        return (float(x_ref), float(y_ref))

    def value_at(self, x, y):
        if self.values is None:
            raise ValueError("map has no fitted values yet")
        fx = np.clip((x - self.x0) / self.dx, 0, self.nx - 1)
        fy = np.clip((y - self.y0) / self.dy, 0, self.ny - 1)
        ix = min(int(fx), self.nx - 2)
        iy = min(int(fy), self.ny - 2)
        tx, ty = fx - ix, fy - iy
        v = self.values
        return ((v[iy, ix] * (1 - tx) + v[iy, ix + 1] * tx) * (1 - ty)
                + (v[iy + 1, ix] * (1 - tx) + v[iy + 1, ix + 1] * tx) * ty)


def update_map(m, samples):
    """Penalized least-squares regridding from all samples so far.

    Minimizes sum((interp(v, sample_xy) - kappa)^2) + smoothness*||Lap v||^2
    (plus a small gradient term so sparsely constrained regions extrapolate
    smoothly instead of tilting freely).  Deterministic direct solve; returns
    a new StiffnessMap with updated values.
    """
    if not samples:
        raise ValueError("update_map needs at least one sample")
    n = m.nx * m.ny
    rows, cols, vals, rhs = [], [], [], []
    for r, s in enumerate(samples):
        fx = np.clip((s.location[0] - m.x0) / m.dx, 0, m.nx - 1)
        fy = np.clip((s.location[1] - m.y0) / m.dy, 0, m.ny - 1)
        ix = min(int(fx), m.nx - 2)
        iy = min(int(fy), m.ny - 2)
        tx, ty = fx - ix, fy - iy
        base = iy * m.nx + ix
        rows += [r] * 4
        cols += [base, base + 1, base + m.nx, base + m.nx + 1]
        vals += [(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty]
        rhs.append(s.kappa)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(samples), n))
    reg = _regularizers(m.nx, m.ny, m.grad_frac)
    lhs = (A.T @ A + m.smoothness * reg).tocsc()
    sol = spsolve(lhs, A.T @ np.asarray(rhs))

    node_x = m.x0 + m.dx * np.arange(m.nx)
    node_y = m.y0 + m.dy * np.arange(m.ny)
    sx = np.array([s.location[0] for s in samples])
    sy = np.array([s.location[1] for s in samples])
    d2 = ((node_x[None, :, None] - sx[None, None, :]) ** 2
          + (node_y[:, None, None] - sy[None, None, :]) ** 2)
    explored = (d2.min(axis=2) <= m.explore_radius ** 2)
    return replace(m, values=sol.reshape(m.ny, m.nx), n_samples=len(samples),
                   explored=explored)
