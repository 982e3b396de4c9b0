"""Semi-automated minimum-stiffness line scan.

The scan line runs from the user-digitized laryngeal prominence to the
midpoint of the two sternoclavicular joints.  The probe tracks the line
tangentially under motion control while the normal force follows the
palpation sinusoid; a directional stiffness sample lands every half
excitation period, and the softest point along the line is reported as the
membrane location estimate.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScanPlan:
    start: np.ndarray   # mm, scan begins here (superior end)
    end: np.ndarray     # mm, midpoint of the sternoclavicular joints
    speed: float = 2.0  # mm/s along the line
    sample_spacing: float = None  # mm; speed * half excitation period if None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        if np.allclose(self.start[:2], self.end[:2]):
            raise ValueError("degenerate scan line: prominence equals joint midpoint")

    @property
    def length(self):
        return float(np.linalg.norm(self.end[:2] - self.start[:2]))

    def point_at(self, arc):
        """x/y point at a given arc length from the start."""
        u = (self.end[:2] - self.start[:2]) / self.length
        return self.start[:2] + u * arc


def plan_scan_line(sc_left, sc_right, prominence, speed=2.0,
                   sample_spacing=None):
    """Scan plan through the joint midpoint and the laryngeal prominence,
    proceeding superior to inferior (prominence first)."""
    sc_left = np.asarray(sc_left, dtype=float)
    sc_right = np.asarray(sc_right, dtype=float)
    prominence = np.asarray(prominence, dtype=float)
    mid = 0.5 * (sc_left + sc_right)
    return ScanPlan(start=prominence, end=mid, speed=speed,
                    sample_spacing=sample_spacing)


@dataclass
class ScanProfile:
    arc_positions: np.ndarray          # mm along the line, strictly increasing
    kappas: np.ndarray                 # N/mm
    xy_points: np.ndarray              # (N, 3) matched surface points
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.arc_positions)

    def write_csv(self, path):
        rows = np.column_stack([self.arc_positions, self.kappas, self.xy_points])
        np.savetxt(path, rows, delimiter=",", comments="",
                   header="arc_mm,kappa,x,y,z", fmt="%.6g")


@dataclass
class ScanResult:
    estimate: np.ndarray    # mm surface point of the minimum
    arc: float              # mm along the line
    at_endpoint: bool       # minimum sat on a profile end
    note: str = ""


def execute_scan(plan, session):
    """Run the scan on a live session; returns the sorted ScanProfile.

    The session must expose the full stack (controller, plant, estimator).
    Contact loss mid-scan pauses the sweep, re-acquires contact and resumes
    (logged as events).
    """
    model = session.model
    dt = session.dt
    events = []

    def note(kind, **info):
        events.append({"t": session.t, "kind": kind, **info})
        session.event(kind, **info)

    def ref(xy, z):
        return np.array([xy[0], xy[1], z])

    # approach: hover over the start point, then descend until contact
    start_xy = plan.start[:2]
    hover_z = model.surface_height(*start_xy) + session.config.scan.hover
    session.direct_ref = ref(start_xy, hover_z)
    session.run_until(
        lambda s: np.linalg.norm(s.state.p[:2] - start_xy) < 0.5
        and abs(s.state.p[2] - hover_z) < 0.5, timeout=8.0)
    _descend_to_contact(session, start_xy, note)

    session.set_excitation(True)
    session.run(session.config.scan.settle_s)

    scan_sample_start = len(session.samples)
    t_move = session.t
    window_s = session.estimator.window * dt
    arc = 0.0
    total = plan.length
    step_arc = plan.speed * dt
    while arc < total:
        if not session.state.in_contact:
            note("contact_loss", arc_mm=arc)
            _descend_to_contact(session, plan.point_at(arc), note)
            session.run(0.3)  # refill the estimation window before moving on
            note("contact_reacquired", arc_mm=arc)
        arc = min(arc + step_arc, total)
        xy = plan.point_at(arc)
        session.direct_ref = ref(xy, session.direct_ref[2])
        session.tick()

    session.set_excitation(False)
    # drop startup samples whose window still includes the stationary
    # settle phase; they mix two motion regimes
    raw = [s for s in session.samples[scan_sample_start:]
           if s.timestamp >= t_move + window_s]
    return build_profile(plan, raw, model, events,
                         median_filter=session.config.scan.median_filter)


def _descend_to_contact(session, xy, note):
    """Lower the reference until the contact latch engages."""
    speed = session.config.scan.approach_speed
    z = session.state.p[2]
    floor = session.model.z_bounds[0]
    while not session.state.in_contact and z > floor:
        z -= speed * session.dt
        session.direct_ref = np.array([xy[0], xy[1], z])
        session.tick()
    if not session.state.in_contact:
        note("contact_failed")


def median3(values):
    """Centered 3-point median; end points pass through unchanged.

    Cycle windows that straddle a steep stiffness gradient can emit single
    undershoot spikes below the true minimum; the median removes isolated
    spikes while leaving broad valleys intact.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        return v.copy()
    out = v.copy()
    stacked = np.vstack([v[:-2], v[1:-1], v[2:]])
    out[1:-1] = np.median(stacked, axis=0)
    return out


def build_profile(plan, samples, model, events=None, median_filter=True):
    """Project cycle samples onto the scan line and sort by arc length.

    Samples sharing an arc position (within 1e-9) are averaged so the arc
    axis stays strictly increasing; a 3-point median then suppresses
    isolated spike samples (disable with median_filter=False).
    """
    if not samples:
        return ScanProfile(np.zeros(0), np.zeros(0), np.zeros((0, 3)),
                           events or [])
    u = (plan.end[:2] - plan.start[:2]) / plan.length
    arcs, kappas, pts = [], [], []
    for s in samples:
        rel = np.asarray(s.location) - plan.start[:2]
        a = float(rel @ u)
        arcs.append(a)
        kappas.append(s.kappa)
        pts.append([s.location[0], s.location[1],
                    model.surface_height(*s.location)])
    order = np.argsort(arcs)
    arcs = np.asarray(arcs)[order]
    kappas = np.asarray(kappas)[order]
    pts = np.asarray(pts)[order]

    out_a, out_k, out_p = [], [], []
    i = 0
    while i < len(arcs):
        j = i
        while j + 1 < len(arcs) and arcs[j + 1] - arcs[i] < 1e-9:
            j += 1
        out_a.append(arcs[i])
        out_k.append(kappas[i:j + 1].mean())
        out_p.append(pts[i:j + 1].mean(axis=0))
        i = j + 1
    out_k = median3(out_k) if median_filter else np.asarray(out_k)
    return ScanProfile(np.asarray(out_a), out_k,
                       np.asarray(out_p), events or [])


def parabola_vertex(x, y):
    """Vertex abscissa of the parabola through three (x, y) points."""
    coeff = np.polyfit(x, y, 2)
    if coeff[0] <= 0:
        return None  # not convex around the minimum
    return -coeff[1] / (2.0 * coeff[0])


def locate_minimum(profile, refine=True):
    """Lowest-stiffness location along the scan with optional sub-sample
    parabolic refinement (disable for the raw-argmin behaviour)."""
    n = len(profile)
    if n < 5:
        raise ValueError("profile needs at least 5 samples")
    k = profile.kappas
    arcs = profile.arc_positions
    i = int(np.argmin(k))

    if i in (0, n - 1):
        return ScanResult(estimate=profile.xy_points[i].copy(), arc=float(arcs[i]),
                          at_endpoint=True, note="membrane possibly outside scan")

    # tie between two adjacent minima -> midpoint of the pair
    for j in (i - 1, i + 1):
        if k[j] == k[i]:
            arc = 0.5 * (arcs[i] + arcs[j])
            return ScanResult(estimate=_point_on_profile(profile, arc),
                              arc=float(arc), at_endpoint=False, note="tie")

    arc = float(arcs[i])
    if refine:
        v = parabola_vertex(arcs[i - 1:i + 2], k[i - 1:i + 2])
        if v is not None:
            arc = float(np.clip(v, arcs[i - 1], arcs[i + 1]))
    return ScanResult(estimate=_point_on_profile(profile, arc), arc=arc,
                      at_endpoint=False)


def _point_on_profile(profile, arc):
    """Surface point at an arc position, linearly interpolated between the
    profile's matched surface points."""
    arcs = profile.arc_positions
    pts = profile.xy_points
    j = int(np.searchsorted(arcs, arc))
    if j <= 0:
        return pts[0].copy()
    if j >= len(arcs):
        return pts[-1].copy()
    t = (arc - arcs[j - 1]) / (arcs[j] - arcs[j - 1])
    return pts[j - 1] + t * (pts[j] - pts[j - 1])
