"""Scripted virtual users standing in for human operators.

Each strategy drives the master device through the same teleoperation
surface a human would use (clutch, scaled motion, the rendered view) plus a
perceptual noise model: landmarks read off the display carry Gaussian
error, felt depths carry discrimination noise, map readouts carry a grid
readout error.  Strategies return the recorded landmark estimate; the
harness turns that into an ExperimentRecord.
"""

from dataclasses import dataclass

import numpy as np

from . import autoscan as asn
from . import phantom as ph

MASTER_SPEED = 50.0   # mm/s free-space master motion
DESCEND_SPEED = 10.0  # mm/s touch-down


class TrialTimeout(Exception):
    """Raised when a trial exceeds its configured time cap."""


@dataclass
class VirtualUser:
    perception_noise_sigma: float = 6.0  # mm, reading locations off the view
    reaction_delay: float = 0.3          # s between decisions
    strategy: str = "visual_only"
    seed: int = 0
    depth_noise: float = 0.4             # mm, felt-depth discrimination
    readout_noise: float = 0.8           # mm, reading the stiffness map
    # the neck midline is a strong lateral cue in the rendered view, while
    # superior-inferior positions must be judged against the mono-view
    # depth axis; lateral reads are correspondingly tighter
    lateral_vis_factor: float = 0.4

    def __post_init__(self):
        if self.perception_noise_sigma < 0:
            raise ValueError("perception noise sigma must be >= 0")

    def rng(self, *extra):
        return np.random.default_rng([self.seed, *extra])

    def read_point(self, true_xy, rng):
        """Visually read a location off the display: anisotropic Gaussian
        error, tighter laterally than along the superior-inferior axis."""
        sig = self.perception_noise_sigma
        return np.asarray(true_xy[:2], dtype=float) + rng.normal(0.0, 1.0, 2) \
            * np.array([self.lateral_vis_factor * sig, sig])


STRATEGY_FOR_MODE = {1: "visual_only", 2: "force_guided",
                     3: "map_guided", 4: "mode4_initializer"}


# -- teleop motion primitives (shared by all strategies) ---------------------

def _guard(session):
    if getattr(session, "deadline", None) is not None and session.t > session.deadline:
        raise TrialTimeout


def settle(session, seconds):
    _guard(session)
    session.run(seconds)


def goto(session, target, speed=MASTER_SPEED, tol=0.4, timeout=20.0):
    """Close the clutch and walk the master until the slave reaches target."""
    target = np.asarray(target, dtype=float)
    scale = session.config.teleop.scale
    session.set_clutch(True)
    master_target = (session.master.anchor_master
                     + (target - session.master.anchor_slave) / scale)
    deadline = session.t + timeout
    while session.t < deadline:
        _guard(session)
        delta = master_target - session.master.master_pos
        dist = np.linalg.norm(delta)
        step = speed * session.dt
        if dist > 1e-9:
            session.move_master(delta if dist <= step else delta * (step / dist))
        else:
            session.move_master(np.zeros(3))
        session.tick()
        if dist <= step and np.linalg.norm(session.state.p - target) < tol:
            return True
    return False


def touch_down(session, xy, speed=DESCEND_SPEED, timeout=10.0):
    """Lower the commanded point until the contact latch engages."""
    scale = session.config.teleop.scale
    session.set_clutch(True)
    deadline = session.t + timeout
    dz = np.array([0.0, 0.0, -speed * session.dt / scale])
    while not session.state.in_contact and session.t < deadline:
        _guard(session)
        session.move_master(dz)
        session.tick()
    session.move_master(np.zeros(3))
    return session.state.in_contact


def lift_off(session, dz=6.0, timeout=6.0):
    scale = session.config.teleop.scale
    session.set_clutch(True)
    target_z = session.state.p[2] + dz
    deadline = session.t + timeout
    step = np.array([0.0, 0.0, DESCEND_SPEED * session.dt / scale])
    while (session.state.in_contact or session.state.p[2] < target_z) \
            and session.t < deadline:
        _guard(session)
        session.move_master(step)
        session.tick()
    session.move_master(np.zeros(3))


def glide_to(session, xy, speed=8.0, timeout=20.0, press=1.0):
    """Move tangentially while staying in contact.

    The normal force is regulated by the hybrid controller, but the hand
    still follows the felt surface: the commanded z tracks just below the
    local surface height so the tangent-plane position error stays lateral
    (a deep stale z command would otherwise drag the probe downhill on the
    ridge flanks)."""
    model = session.model
    scale = session.config.teleop.scale
    session.set_clutch(True)
    deadline = session.t + timeout
    target = np.asarray(xy, dtype=float)
    while session.t < deadline:
        _guard(session)
        cur = session.master.reference[:2]
        delta = target - cur
        dist = np.linalg.norm(delta)
        step = speed * session.dt
        done_cmd = dist <= step
        nxt = target if done_cmd else cur + delta * (step / dist)
        z_want = model.surface_height(nxt[0], nxt[1]) - press
        d = np.array([nxt[0] - cur[0], nxt[1] - cur[1],
                      z_want - session.master.reference[2]]) / scale
        session.move_master(d)
        session.tick()
        if done_cmd and np.linalg.norm(session.state.p[:2] - target) < 0.6:
            return True
    return False


def hover_point(session, model, xy, clearance=6.0):
    return np.array([xy[0], xy[1],
                     model.surface_height(xy[0], xy[1]) + clearance])


def record_probe_landmark(session):
    """Digitize the probe's current contact point: the landmark lives on
    the surface, so the pressed tip position is projected back up to the
    surface height at its x/y."""
    x, y, _ = session.state.p
    return session.surface_point(x, y)


# -- strategies --------------------------------------------------------------

def guess_membrane_xy(user, model, rng):
    """Visual read of the membrane location from the rendered scene."""
    gt = ph.ground_truth_center(model)
    return user.read_point(gt, rng)


def run_visual_only(user, session):
    """Mode 1: fly to the visually guessed spot, touch, record."""
    model = session.model
    rng = user.rng(1)
    guess = guess_membrane_xy(user, model, rng)
    settle(session, user.reaction_delay)
    goto(session, hover_point(session, model, guess))
    touch_down(session, guess)
    settle(session, user.reaction_delay)
    return record_probe_landmark(session), {}


def run_force_guided(user, session):
    """Mode 2: palpate a small grid around the visual guess and keep the
    spot that feels deepest at the constant hold force."""
    model = session.model
    rng = user.rng(2)
    guess = guess_membrane_xy(user, model, rng)
    # taller than wide: the uncertain axis is superior-inferior
    spots = [guess + np.array([ix * 4.0, iy * 4.0])
             for iy in (-1.5, -0.5, 0.5, 1.5) for ix in (-1, 0, 1)]

    settle(session, user.reaction_delay)
    goto(session, hover_point(session, model, spots[0]))
    touch_down(session, spots[0])

    best_xy, best_depth = None, -np.inf
    for spot in spots:
        if not session.state.in_contact:
            touch_down(session, spot)
        glide_to(session, spot)
        settle(session, 0.5)  # let the hold force settle before judging depth
        x, y, z = session.state.p
        felt = (model.surface_height(x, y) - z) + rng.normal(0.0, user.depth_noise)
        if felt > best_depth:
            best_depth, best_xy = felt, np.array([x, y])
    glide_to(session, best_xy)
    settle(session, user.reaction_delay)
    return record_probe_landmark(session), {"probed": len(spots)}


COVERAGE_COLS = 5
COVERAGE_ROWS = 5
COVERAGE_DX = 4.0
COVERAGE_DY = 5.0


def coverage_sites(center, cols=COVERAGE_COLS, rows=COVERAGE_ROWS,
                   dx=COVERAGE_DX, dy=COVERAGE_DY):
    """Serpentine palpation sites centered on a point."""
    xs = (np.arange(cols) - (cols - 1) / 2) * dx + center[0]
    ys = (np.arange(rows) - (rows - 1) / 2) * dy + center[1]
    sites = []
    for j, y in enumerate(ys):
        row = [(x, y) for x in (xs if j % 2 == 0 else xs[::-1])]
        sites.extend(row)
    return sites


def palpate_coverage(session, sites, dwell=0.75, glide_speed=8.0):
    """Excited palpation over the sites: glide between them in contact,
    dwell long enough for clean estimation windows at each."""
    model = session.model
    first = np.asarray(sites[0])
    goto(session, hover_point(session, model, first))
    touch_down(session, first)
    session.set_excitation(True)
    settle(session, dwell)
    for xy in sites[1:]:
        glide_to(session, np.asarray(xy), speed=glide_speed)
        settle(session, dwell)
    session.set_excitation(False)


def run_map_guided(user, session):
    """Mode 3: build the live stiffness map by covering the region, palpate
    a refinement pass around the first blue spot, then steer the probe onto
    the displayed minimum and record."""
    model = session.model
    rng = user.rng(3)
    center = guess_membrane_xy(user, model, rng)
    box_lo = session.fixture.b_min + 1.0
    box_hi = session.fixture.b_max - 1.0
    sites = [np.clip(np.asarray(s), box_lo, box_hi)
             for s in coverage_sites(center)]

    settle(session, user.reaction_delay)
    palpate_coverage(session, sites)

    if session.map.values is not None:
        # drill down: extra palpation around the current blue spot
        blue = np.asarray(session.map.argmin_xy())
        extra = [blue + d for d in ([0.0, 0.0], [2.0, 0.0], [-2.0, 0.0],
                                    [0.0, 2.0], [0.0, -2.0])]
        session.set_excitation(True)
        for xy in extra:
            glide_to(session, np.clip(xy, box_lo, box_hi))
            settle(session, 0.75)
        session.set_excitation(False)

    if session.map.values is None:
        target = center  # no usable samples; fall back to the visual guess
    else:
        target = np.asarray(session.map.argmin_refined())
        target = target + rng.normal(0.0, user.readout_noise, 2)
    glide_to(session, target)
    settle(session, user.reaction_delay)
    return record_probe_landmark(session), {"map_samples": len(session.samples)}


def run_mode4_initializer(user, session):
    """Mode 4: digitize the three anatomical landmarks (with perception
    noise), then hand control to the autonomous scan."""
    model = session.model
    rng = user.rng(4)
    digitized = {}
    for name in ("sternoclavicular_left", "sternoclavicular_right",
                 "laryngeal_prominence"):
        true_pt = model.landmarks[name]
        read_xy = user.read_point(true_pt, rng)
        settle(session, user.reaction_delay)
        goto(session, hover_point(session, model, read_xy))
        touch_down(session, read_xy)
        digitized[name] = session.state.p.copy()
        lift_off(session)

    plan = asn.plan_scan_line(digitized["sternoclavicular_left"],
                              digitized["sternoclavicular_right"],
                              digitized["laryngeal_prominence"],
                              speed=session.config.scan.speed)
    session.direct_ref = None
    profile = asn.execute_scan(plan, session)
    result = asn.locate_minimum(profile, refine=session.config.scan.refine)
    return result.estimate.copy(), {
        "landmarks": {k: v.tolist() for k, v in digitized.items()},
        "scan_samples": len(profile),
        "at_endpoint": result.at_endpoint,
    }


STRATEGIES = {
    "visual_only": run_visual_only,
    "force_guided": run_force_guided,
    "map_guided": run_map_guided,
    "mode4_initializer": run_mode4_initializer,
}


def run_strategy(user, session):
    fn = STRATEGIES.get(user.strategy)
    if fn is None:
        raise ValueError(f"unknown strategy {user.strategy!r}")
    return fn(user, session)
