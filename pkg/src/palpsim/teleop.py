"""Master-side teleoperation: clutched motion scaling, force feedback,
and the forbidden-region virtual fixture.

The master device is virtual (mouse/keyboard in the console, a scripted
user model headless).  The clutch gates both motion commands and reflected
forces; anchors are re-seeded on every clutch close so references never
jump.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SCALE = 0.8            # master-to-slave telemanipulation gain
DEFAULT_MASTER_DAMPING = 0.005  # N*s/mm added to reflected forces


@dataclass
class MasterState:
    master_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))  # mm
    clutch_closed: bool = False
    anchor_master: np.ndarray = field(default_factory=lambda: np.zeros(3))
    anchor_slave: np.ndarray = field(default_factory=lambda: np.zeros(3))
    reference: np.ndarray = field(default_factory=lambda: np.zeros(3))  # held p_d

    def set_clutch(self, closed):
        """Clutch edge handling: closing re-seeds both anchors."""
        if closed and not self.clutch_closed:
            self.anchor_master = self.master_pos.copy()
            self.anchor_slave = self.reference.copy()
        self.clutch_closed = closed


@dataclass
class FixtureBox:
    b_min: np.ndarray  # (2,) mm, x/y lower bounds
    b_max: np.ndarray  # (2,) mm, x/y upper bounds
    k_wall: float = 1.0  # N/mm

    def __post_init__(self):
        self.b_min = np.asarray(self.b_min, dtype=float)
        self.b_max = np.asarray(self.b_max, dtype=float)
        if self.b_min.shape != (2,) or self.b_max.shape != (2,):
            raise ValueError("fixture bounds are per-axis (x, y)")
        if np.any(self.b_min >= self.b_max):
            raise ValueError("fixture box must have b_min < b_max per axis")


def map_master_to_slave(ms, scale=DEFAULT_SCALE):
    """Scaled reference: anchor_slave + scale * master displacement.

    With the clutch open the last reference is held.
    """
    if ms.clutch_closed:
        ms.reference = ms.anchor_slave + scale * (ms.master_pos - ms.anchor_master)
    return ms.reference.copy()


def feedback_force(f_c, master_vel, damping=DEFAULT_MASTER_DAMPING,
                   clutch=True):
    """Force reflected to the operator's hand: contact force minus viscous
    damping on the master velocity (mm/s); zero with the clutch open."""
    if not clutch:
        return np.zeros(3)
    return np.asarray(f_c, dtype=float) - damping * np.asarray(master_vel, dtype=float)


def virtual_fixture_force(p_d, box):
    """Forbidden-region wall force on the commanded position.

    Per axis i in {x, y}: k*(bound - p_d_i) outside the box, zero inside.
    The z axis is never affected.
    """
    f = np.zeros(3)
    for i in range(2):
        if p_d[i] > box.b_max[i]:
            f[i] = box.k_wall * (box.b_max[i] - p_d[i])
        elif p_d[i] < box.b_min[i]:
            f[i] = box.k_wall * (box.b_min[i] - p_d[i])
    return f


def clamp_to_box(p_d, box):
    """Headless-mode constraint: clamp the reference x/y into the box."""
    out = np.array(p_d, dtype=float)
    out[0] = min(max(out[0], box.b_min[0]), box.b_max[0])
    out[1] = min(max(out[1], box.b_min[1]), box.b_max[1])
    return out
