"""Virtual neck phantom: surface geometry, stiffness field, landmarks.

The phantom is a rigid height field z(x, y) over a rectangular workspace with
a spatially varying contact stiffness k(x, y).  Anatomical landmarks and the
digitized membrane boundary provide the ground truth for the landmark
identification experiments.  All lengths are in mm, stiffness in N/mm,
forces in N.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import point_in_polygon, points_in_polygon

SCHEMA_VERSION = 1
REQUIRED_LANDMARKS = (
    "laryngeal_prominence",
    "sternoclavicular_left",
    "sternoclavicular_right",
)


class PhantomError(ValueError):
    """Raised for phantom file schema or invariant violations."""


class BilinearField:
    """Scalar field on a regular grid with bilinear interpolation.

    values is (ny, nx), row-major over y rows: values[iy, ix] is the node at
    (x0 + ix*dx, y0 + iy*dy).
    """

    def __init__(self, x0, y0, dx, dy, values):
        self.x0 = float(x0)
        self.y0 = float(y0)
        self.dx = float(dx)
        self.dy = float(dy)
        self.values = np.asarray(values, dtype=float)
        self.values.setflags(write=False)
        self.ny, self.nx = self.values.shape
        self.x1 = self.x0 + (self.nx - 1) * self.dx
        self.y1 = self.y0 + (self.ny - 1) * self.dy

    def contains(self, x, y):
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def at(self, x, y):
        """Bilinear interpolation; queries are clamped to the grid bounds."""
        fx = (x - self.x0) / self.dx
        fy = (y - self.y0) / self.dy
        if fx < 0.0:
            fx = 0.0
        elif fx > self.nx - 1:
            fx = float(self.nx - 1)
        if fy < 0.0:
            fy = 0.0
        elif fy > self.ny - 1:
            fy = float(self.ny - 1)
        ix = min(int(fx), self.nx - 2)
        iy = min(int(fy), self.ny - 2)
        tx = fx - ix
        ty = fy - iy
        v = self.values
        v00 = v[iy, ix]
        v10 = v[iy, ix + 1]
        v01 = v[iy + 1, ix]
        v11 = v[iy + 1, ix + 1]
        return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty

    def at_many(self, xs, ys):
        """Vectorized bilinear interpolation (clamped)."""
        fx = np.clip((np.asarray(xs, float) - self.x0) / self.dx, 0, self.nx - 1)
        fy = np.clip((np.asarray(ys, float) - self.y0) / self.dy, 0, self.ny - 1)
        ix = np.minimum(fx.astype(int), self.nx - 2)
        iy = np.minimum(fy.astype(int), self.ny - 2)
        tx = fx - ix
        ty = fy - iy
        v = self.values
        return ((v[iy, ix] * (1 - tx) + v[iy, ix + 1] * tx) * (1 - ty)
                + (v[iy + 1, ix] * (1 - tx) + v[iy + 1, ix + 1] * tx) * ty)


@dataclass(frozen=True)
class PhantomModel:
    """Immutable phantom: safe for concurrent reads from sim loop and UI."""

    x_bounds: tuple
    y_bounds: tuple
    z_bounds: tuple
    height: BilinearField
    stiffness: BilinearField
    landmarks: dict
    membrane_boundary: np.ndarray  # (N, 3) mm
    # height-field gradient, interpolated for surface normals
    grad_x: BilinearField = field(repr=False, default=None)
    grad_y: BilinearField = field(repr=False, default=None)

    def surface_height(self, x, y):
        return self.height.at(x, y)

    def surface_normal(self, x, y):
        """Outward unit normal of the height field at (x, y)."""
        gx = self.grad_x.at(x, y)
        gy = self.grad_y.at(x, y)
        inv = 1.0 / math.sqrt(gx * gx + gy * gy + 1.0)
        return np.array([-gx * inv, -gy * inv, inv])

    def contact_probe(self, x, y, z):
        """Fused contact query for the sim loop: (fx, fy, fz, penetration).

        Identical to contact_force but shares one grid lookup across the
        height, gradient and stiffness fields."""
        hf = self.height
        fx = (x - hf.x0) / hf.dx
        fy = (y - hf.y0) / hf.dy
        nx, ny = hf.nx, hf.ny
        if fx < 0.0:
            fx = 0.0
        elif fx > nx - 1:
            fx = float(nx - 1)
        if fy < 0.0:
            fy = 0.0
        elif fy > ny - 1:
            fy = float(ny - 1)
        ix = int(fx)
        if ix > nx - 2:
            ix = nx - 2
        iy = int(fy)
        if iy > ny - 2:
            iy = ny - 2
        tx = fx - ix
        ty = fy - iy
        w00 = (1.0 - tx) * (1.0 - ty)
        w10 = tx * (1.0 - ty)
        w01 = (1.0 - tx) * ty
        w11 = tx * ty
        v = hf.values
        h = (w00 * v[iy, ix] + w10 * v[iy, ix + 1]
             + w01 * v[iy + 1, ix] + w11 * v[iy + 1, ix + 1])
        pen = h - z
        if pen <= 0.0:
            return 0.0, 0.0, 0.0, pen
        v = self.grad_x.values
        gx = (w00 * v[iy, ix] + w10 * v[iy, ix + 1]
              + w01 * v[iy + 1, ix] + w11 * v[iy + 1, ix + 1])
        v = self.grad_y.values
        gy = (w00 * v[iy, ix] + w10 * v[iy, ix + 1]
              + w01 * v[iy + 1, ix] + w11 * v[iy + 1, ix + 1])
        k = self.stiffness.at(x, y)
        scale = k * pen / math.sqrt(gx * gx + gy * gy + 1.0)
        return -gx * scale, -gy * scale, scale, pen


@dataclass(frozen=True)
class GroundTruth:
    """Digitized membrane center used as the experiment ground truth."""

    center: np.ndarray  # (3,) mm


def _grid_fields(spec_dict, x_bounds, y_bounds, key):
    block = spec_dict.get(key)
    if block is None:
        raise PhantomError(f"{key}: missing")
    for sub in ("nx", "ny", "values"):
        if sub not in block:
            raise PhantomError(f"{key}.{sub}: missing")
    nx, ny = int(block["nx"]), int(block["ny"])
    vals = np.asarray(block["values"], dtype=float)
    if nx < 2 or ny < 2:
        raise PhantomError(f"{key}: grid must be at least 2x2, got {nx}x{ny}")
    if vals.size != nx * ny:
        raise PhantomError(
            f"{key}.values: expected {nx * ny} values, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise PhantomError(f"{key}.values: non-finite entry")
    grid = vals.reshape(ny, nx)
    dx = (x_bounds[1] - x_bounds[0]) / (nx - 1)
    dy = (y_bounds[1] - y_bounds[0]) / (ny - 1)
    return BilinearField(x_bounds[0], y_bounds[0], dx, dy, grid)


def _in_bounds(p, xb, yb, zb):
    return (xb[0] <= p[0] <= xb[1] and yb[0] <= p[1] <= yb[1]
            and zb[0] <= p[2] <= zb[1])


def from_dict(doc):
    """Build and validate a PhantomModel from a parsed phantom document."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise PhantomError(
            f"schema_version: expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    ws = doc.get("workspace")
    if ws is None:
        raise PhantomError("workspace: missing")
    try:
        xb = tuple(float(v) for v in ws["x"])
        yb = tuple(float(v) for v in ws["y"])
        zb = tuple(float(v) for v in ws["z"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PhantomError(f"workspace: malformed ({exc})") from exc
    for name, b in (("x", xb), ("y", yb), ("z", zb)):
        if len(b) != 2 or not b[0] < b[1]:
            raise PhantomError(f"workspace.{name}: bounds must be [min, max]")

    height = _grid_fields(doc, xb, yb, "surface")
    stiffness = _grid_fields(doc, xb, yb, "stiffness")

    bad = np.argwhere(stiffness.values <= 0.0)
    if bad.size:
        iy, ix = bad[0]
        raise PhantomError(
            f"stiffness.values: non-positive value at grid node (ix={ix}, iy={iy})")

    lm_block = doc.get("landmarks")
    if lm_block is None:
        raise PhantomError("landmarks: missing")
    landmarks = {}
    for name in REQUIRED_LANDMARKS:
        if name not in lm_block:
            raise PhantomError(f"landmarks.{name}: missing")
        p = np.asarray(lm_block[name], dtype=float)
        if p.shape != (3,):
            raise PhantomError(f"landmarks.{name}: expected [x, y, z]")
        if not _in_bounds(p, xb, yb, zb):
            raise PhantomError(f"landmarks.{name}: outside workspace bounds")
        landmarks[name] = p

    boundary = np.asarray(doc.get("membrane_boundary", []), dtype=float)
    if boundary.ndim != 2 or boundary.shape[0] < 3 or boundary.shape[1] != 3:
        raise PhantomError("membrane_boundary: need at least 3 [x, y, z] points")
    for i, p in enumerate(boundary):
        if not _in_bounds(p, xb, yb, zb):
            raise PhantomError(f"membrane_boundary[{i}]: outside workspace bounds")

    gy, gx = np.gradient(height.values, height.dy, height.dx)
    model = PhantomModel(
        x_bounds=xb, y_bounds=yb, z_bounds=zb,
        height=height, stiffness=stiffness,
        landmarks=landmarks, membrane_boundary=boundary,
        grad_x=BilinearField(height.x0, height.y0, height.dx, height.dy, gx),
        grad_y=BilinearField(height.x0, height.y0, height.dx, height.dy, gy),
    )
    boundary.setflags(write=False)

    _check_membrane_minimum(model)

    center = ground_truth_center(model)
    if not point_in_polygon(center[0], center[1], boundary[:, :2]):
        raise PhantomError(
            "membrane_boundary: centroid falls outside the boundary polygon")
    return model


def _check_membrane_minimum(model):
    """The membrane polygon must contain the global stiffness minimum, and
    every node inside it that reaches the minimum must be strictly softer
    than everything outside."""
    stiff = model.stiffness
    xs = stiff.x0 + stiff.dx * np.arange(stiff.nx)
    ys = stiff.y0 + stiff.dy * np.arange(stiff.ny)
    gx, gy = np.meshgrid(xs, ys)
    inside = points_in_polygon(gx.ravel(), gy.ravel(), model.membrane_boundary[:, :2])
    vals = stiff.values.ravel()
    if not inside.any():
        raise PhantomError("membrane_boundary: polygon contains no grid node")
    if vals[inside].min() >= vals[~inside].min():
        raise PhantomError(
            "stiffness: membrane region is not the global minimum basin")


def load_phantom(path):
    """Load and validate a phantom JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise PhantomError(f"cannot read phantom file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PhantomError(f"cannot parse phantom file {path}: {exc}") from exc
    return from_dict(doc)


def local_stiffness(model, x, y):
    """Bilinearly interpolated stiffness (N/mm) at (x, y); raises off-grid."""
    if not model.stiffness.contains(x, y):
        raise ValueError(f"stiffness query ({x}, {y}) outside workspace")
    return model.stiffness.at(x, y)


def contact_force(model, probe):
    """Penalty contact force (N) the surface exerts on the probe tip.

    Zero above the surface; below it the force is k(x, y) * penetration
    along the outward surface normal, with penetration measured vertically.
    Continuous through the contact boundary.  Queries outside the workspace
    x/y range use the clamped boundary value of the fields.
    """
    fx, fy, fz, _ = model.contact_probe(float(probe[0]), float(probe[1]),
                                        float(probe[2]))
    return np.array([fx, fy, fz])


def ground_truth_center(model):
    """Centroid of the digitized membrane boundary points."""
    if len(model.membrane_boundary) == 0:
        raise ValueError("membrane_boundary is empty")
    return model.membrane_boundary.mean(axis=0)


# --- default phantom ------------------------------------------------------
#
# The real training phantom's stiffness values are not published; these
# magnitudes are authored so that the membrane basin is an unambiguous
# global minimum and the palpation forces (up to 2.45 N) produce 1-3 mm
# penetrations.

DEFAULT_PLATEAU = 2.5      # N/mm, cartilage
DEFAULT_BASIN_FLOOR = 0.8  # N/mm, membrane center
DEFAULT_BASIN_BOWL = 0.2   # N/mm rise from center to membrane edge
DEFAULT_MEMBRANE_CENTER = (0.0, 22.0)
DEFAULT_MEMBRANE_HALF_AXES = (6.5, 5.0)  # lateral, superior-inferior


def _default_height(x, y):
    # gentle flat-topped ridge along the midline (y axis); flanks decay to
    # the flat base within |x| ~ 20 mm
    return 12.0 + 10.0 * math.exp(-((x / 14.0) ** 4))


def _default_stiffness(x, y):
    cx, cy = DEFAULT_MEMBRANE_CENTER
    ax, ay = DEFAULT_MEMBRANE_HALF_AXES
    rho = math.hypot((x - cx) / ax, (y - cy) / ay)
    edge = DEFAULT_BASIN_FLOOR + DEFAULT_BASIN_BOWL
    if rho <= 1.0:
        return DEFAULT_BASIN_FLOOR + DEFAULT_BASIN_BOWL * rho * rho
    ramp_w = 0.35  # ~2 mm at the mean half-axis
    if rho >= 1.0 + ramp_w:
        return DEFAULT_PLATEAU
    t = (rho - 1.0) / ramp_w
    return edge + (DEFAULT_PLATEAU - edge) * 0.5 * (1.0 - math.cos(math.pi * t))


def build_default_neck():
    """Author the bundled default phantom as a schema document."""
    xb, yb, zb = (-50.0, 50.0), (-75.0, 75.0), (0.0, 60.0)
    nx, ny = 101, 151  # 1 mm grid
    xs = np.linspace(xb[0], xb[1], nx)
    ys = np.linspace(yb[0], yb[1], ny)
    heights = np.array([[_default_height(x, y) for x in xs] for y in ys])
    stiff = np.array([[_default_stiffness(x, y) for x in xs] for y in ys])

    lm = {
        "laryngeal_prominence": [0.0, 40.0, _default_height(0.0, 40.0)],
        "sternoclavicular_left": [-22.0, -40.0, _default_height(-22.0, -40.0)],
        "sternoclavicular_right": [22.0, -40.0, _default_height(22.0, -40.0)],
    }
    cx, cy = DEFAULT_MEMBRANE_CENTER
    ax, ay = DEFAULT_MEMBRANE_HALF_AXES
    boundary = []
    for j in range(16):
        th = 2.0 * math.pi * j / 16
        bx = cx + ax * math.cos(th)
        by = cy + ay * math.sin(th)
        boundary.append([round(bx, 6), round(by, 6),
                         round(_default_height(bx, by), 6)])

    return {
        "schema_version": SCHEMA_VERSION,
        "workspace": {"x": list(xb), "y": list(yb), "z": list(zb)},
        "surface": {"nx": nx, "ny": ny,
                    "values": [round(v, 5) for v in heights.ravel().tolist()]},
        "stiffness": {"nx": nx, "ny": ny,
                      "values": [round(v, 5) for v in stiff.ravel().tolist()]},
        "landmarks": lm,
        "membrane_boundary": boundary,
    }


def default_neck_path():
    """Path of the bundled default_neck phantom file."""
    from importlib.resources import files
    return str(files("palpsim") / "data" / "default_neck.json")


def load_default_neck():
    return load_phantom(default_neck_path())
