"""Single-loop simulation session.

Owns the plant, controller, teleop state and the stiffness estimation
pipeline, stepped at the plant rate (1 kHz).  The stiffness map regrids on
a 50 Hz display tick whenever new cycle samples arrived, never blocking the
control loop.  All randomness flows from one seeded generator, so identical
seeds and command streams reproduce bit-identical trajectories.
"""

import numpy as np

from . import controller as ctl
from . import robot
from . import stiffness as se
from . import teleop
from .config import RunConfig

MODE_NAMES = {1: "visual", 2: "force_feedback", 3: "stiffness_map", 4: "autoscan"}

TICK_COLUMNS = ("t", "px", "py", "pz", "vx", "vy", "vz",
                "fx", "fy", "fz", "taux", "tauy", "tauz", "mode", "in_contact")


class TickLog:
    """Preallocated tick log; grows geometrically, dumps to CSV."""

    def __init__(self, capacity=4096):
        self._buf = np.zeros((capacity, len(TICK_COLUMNS)))
        self.n = 0

    def append(self, row):
        if self.n == len(self._buf):
            self._buf = np.vstack([self._buf, np.zeros_like(self._buf)])
        self._buf[self.n] = row
        self.n += 1

    def rows(self):
        return self._buf[:self.n]

    def write_csv(self, path):
        header = ",".join(TICK_COLUMNS)
        np.savetxt(path, self.rows(), delimiter=",", header=header,
                   comments="", fmt="%.6g")


class SimSession:
    """Headless simulation instance for one trial or interactive session."""

    def __init__(self, model, config=None, mode=1, seed=0, log=False):
        self.model = model
        self.config = config or RunConfig()
        self.mode = mode
        cfg = self.config

        self.plant = cfg.plant
        self.ctrl_cfg = cfg.controller
        self.dt = self.plant.dt

        start = np.asarray(cfg.experiment.start_pos, dtype=float)
        self.state = robot.RobotState.at_rest(start)
        self.ctrl_state = ctl.ControllerState.fresh(self.ctrl_cfg)

        self.master = teleop.MasterState()
        self.master.reference = start.copy()
        self.master_vel = np.zeros(3)
        self.fixture = teleop.FixtureBox(
            np.asarray(cfg.teleop.fixture_min), np.asarray(cfg.teleop.fixture_max),
            cfg.teleop.k_wall)
        self.fixture_force = np.zeros(3)
        self.feedback = np.zeros(3)

        self.excitation = cfg.excitation
        self.excitation_on = False
        self._excitation_t0 = 0.0

        est = cfg.estimation
        self.estimator = se.CycleEstimator(
            window=est.window, slide=est.slide, mu_window=est.mu_window,
            min_pairs=est.min_pairs, min_spread=est.min_spread,
            max_drift=est.max_drift)
        self._max_cmd_speed = est.max_command_speed
        self._prev_p_d = start.copy()
        self.samples = []
        self.map = se.StiffnessMap.over_box(
            self.fixture.b_min, self.fixture.b_max, step=cfg.map.step,
            smoothness=cfg.map.smoothness, grad_frac=cfg.map.grad_frac)
        self._map_solved_at = 0
        self._display_interval = max(1, int(round(self.plant.step_rate
                                                  / cfg.map.update_rate)))

        self.rng = np.random.default_rng(seed)
        self._noise = None
        self._noise_i = 0
        fx, fy, fz, _ = model.contact_probe(*self.state.p)
        self._f_true = np.array([fx, fy, fz])  # true contact force at state.p

        self.t = 0.0
        self.tick_idx = 0
        self.direct_ref = None  # overrides the teleop reference when set
        self.events = []
        self.log = TickLog() if log else None

    # -- master-side inputs -------------------------------------------------

    def move_master(self, delta):
        delta = np.asarray(delta, dtype=float)
        self.master.master_pos = self.master.master_pos + delta
        self.master_vel = delta / self.dt

    def set_clutch(self, closed):
        self.master.set_clutch(closed)
        if not closed:
            self.master_vel = np.zeros(3)

    def set_excitation(self, on):
        if on and not self.excitation_on:
            self._excitation_t0 = self.t
            self.estimator.clear()
        self.excitation_on = on

    def event(self, kind, **info):
        self.events.append({"t": self.t, "kind": kind, **info})

    # -- core loop ----------------------------------------------------------

    def _sensor_noise(self):
        sigma = self.plant.sensor_noise_sigma
        if sigma <= 0:
            return None
        if self._noise is None or self._noise_i >= len(self._noise):
            self._noise = self.rng.normal(0.0, sigma, (4096, 3))
            self._noise_i = 0
        row = self._noise[self._noise_i]
        self._noise_i += 1
        return row

    def desired_force(self):
        """Force setpoint for the hybrid regime: the excitation sinusoid
        along z when enabled, else the constant hold along the normal."""
        if self.excitation_on:
            s = se.sinusoid_reference(self.t - self._excitation_t0, self.excitation)
            return np.array([0.0, 0.0, s])
        return self.ctrl_cfg.f_hold * self.ctrl_state.n_hat

    def tick(self):
        """Advance one control/plant step."""
        if self.direct_ref is not None:
            p_d = self.direct_ref.copy()
        else:
            p_d = teleop.map_master_to_slave(self.master, self.config.teleop.scale)

        # forbidden-region fixture: active only while in contact; headless
        # references are clamped and the would-be wall force logged
        if self.state.in_contact:
            self.fixture_force = teleop.virtual_fixture_force(p_d, self.fixture)
            if self.fixture_force[0] != 0.0 or self.fixture_force[1] != 0.0:
                p_d = teleop.clamp_to_box(p_d, self.fixture)
        else:
            self.fixture_force = np.zeros(3)

        refs = {"p_d": p_d, "p_dot_d": _ZERO3, "p_ddot_d": _ZERO3,
                "f_d": self.desired_force()}

        tau = ctl.control_step(self.state, refs, self.ctrl_cfg,
                               self.ctrl_state, self.plant)
        new_state = robot.step_dynamics(self.state, tau, self.plant,
                                        self.model, self.dt, rng=None,
                                        f_contact=self._f_true)
        self._f_true = new_state.f_c  # true force at the new position
        noise = self._sensor_noise()
        if noise is not None:
            new_state.f_c = new_state.f_c + noise
        new_state.in_contact = self.ctrl_state.detector.latched
        self.state = new_state

        if self.mode >= 2:
            self.feedback = teleop.feedback_force(
                self.state.f_c, self.master_vel,
                self.config.teleop.master_damping, self.master.clutch_closed)

        if self.excitation_on:
            # cycles are only valid while palpating in place (or creeping
            # along a scan line); contact breaks, repositioning moves and
            # post-move settling all restart the window
            lat = p_d - self._prev_p_d
            cmd_speed = (lat[0] * lat[0] + lat[1] * lat[1]) ** 0.5 / self.dt
            v = self.state.p_dot
            probe_lat = (v[0] * v[0] + v[1] * v[1]) ** 0.5
            if (self.state.in_contact
                    and max(cmd_speed, probe_lat) <= self._max_cmd_speed):
                sample = self.estimator.push(self.state.p, -self.state.f_c, self.t)
                if sample is not None:
                    self.samples.append(sample)
            else:
                self.estimator.clear()
        self._prev_p_d = p_d

        self.t += self.dt
        self.tick_idx += 1

        if (self.tick_idx % self._display_interval == 0
                and len(self.samples) > self._map_solved_at):
            self.map = se.update_map(self.map, self.samples)
            self._map_solved_at = len(self.samples)

        if self.log is not None:
            s = self.state
            self.log.append((self.t, s.p[0], s.p[1], s.p[2],
                             s.p_dot[0], s.p_dot[1], s.p_dot[2],
                             s.f_c[0], s.f_c[1], s.f_c[2],
                             tau[0], tau[1], tau[2],
                             self.mode, 1.0 if s.in_contact else 0.0))
        return self.state

    def run(self, seconds):
        n = int(round(seconds * self.plant.step_rate))
        for _ in range(n):
            self.tick()
        return self.state

    def run_until(self, predicate, timeout):
        """Tick until predicate(session) or the timeout (s) elapses.
        Returns True if the predicate fired."""
        deadline = self.t + timeout
        while self.t < deadline:
            self.tick()
            if predicate(self):
                return True
        return False

    # -- conveniences used by the harness/service ----------------------------

    def probe_xy(self):
        return self.state.p[0], self.state.p[1]

    def surface_point(self, x, y):
        return np.array([x, y, self.model.surface_height(x, y)])

    def map_snapshot(self):
        """Serializable live-map snapshot for the UI stream / CSV export."""
        m = self.map
        values = m.values if m.values is not None else np.zeros((m.ny, m.nx))
        return {
            "x0": m.x0, "y0": m.y0, "dx": m.dx, "dy": m.dy,
            "nx": m.nx, "ny": m.ny,
            "values": [round(float(v), 4) for v in values.ravel()],
            "n_samples": m.n_samples,
            "probe_xy": [float(self.state.p[0]), float(self.state.p[1])],
        }


_ZERO3 = np.zeros(3)
