import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palpsim import controller as ctl
from palpsim import phantom as ph
from palpsim import robot
from palpsim.config import RunConfig
from palpsim.simulate import SimSession

from conftest import grid_phantom


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestProjectionMatrices:
    def test_z_normal(self):
        of, om = ctl.projection_matrices([0.0, 0.0, 1.0])
        assert np.allclose(of, np.diag([0, 0, 1.0]), atol=1e-15)
        assert np.allclose(om, np.diag([1.0, 1.0, 0]), atol=1e-15)

    def test_x_normal(self):
        of, om = ctl.projection_matrices([1.0, 0.0, 0.0])
        assert np.allclose(of, np.diag([1.0, 0, 0]), atol=1e-15)
        assert np.allclose(om, np.diag([0, 1.0, 1.0]), atol=1e-15)

    def test_tilted_normal(self):
        s = 1.0 / math.sqrt(2.0)
        of, _ = ctl.projection_matrices([s, 0.0, s])
        expected = np.array([[0.5, 0, 0.5], [0, 0, 0], [0.5, 0, 0.5]])
        assert np.allclose(of, expected, atol=1e-12)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            ctl.projection_matrices([1.0, 1.0, 0.0])

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    @settings(max_examples=200, deadline=None)
    def test_projection_algebra(self, a, b, c):
        v = np.array([a, b, c])
        n = np.linalg.norm(v)
        if n < 1e-3:
            return
        of, om = ctl.projection_matrices(v / n)
        assert np.allclose(of + om, np.eye(3), atol=1e-12)
        assert np.allclose(of @ of, of, atol=1e-12)
        assert np.allclose(om @ om, om, atol=1e-12)
        assert np.allclose(of @ om, np.zeros((3, 3)), atol=1e-12)


class TestSurfaceNormalEstimate:
    def test_constant_forces(self):
        hist = np.tile([0.0, 0.0, 2.0], (100, 1))
        assert np.allclose(ctl.estimate_surface_normal(hist), [0, 0, 1])

    def test_symmetric_cancellation(self):
        hist = np.array([[1.0, 0, 1]] * 50 + [[-1.0, 0, 1]] * 50)
        assert np.allclose(ctl.estimate_surface_normal(hist), [0, 0, 1])

    def test_noisy_direction_recovery(self):
        true_dir = np.array([0.0, 0.6, 0.8])  # already unit
        rng = np.random.default_rng(12)
        hist = 2.0 * true_dir + rng.normal(0, 0.1, (100, 3))
        est = ctl.estimate_surface_normal(hist)
        angle = math.degrees(math.acos(np.clip(est @ true_dir, -1, 1)))
        assert angle < 2.0

    def test_zero_mean_rejected(self):
        hist = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        with pytest.raises(ValueError, match="normal"):
            ctl.estimate_surface_normal(hist)

    def test_filter_matches_public_op(self):
        rng = np.random.default_rng(5)
        filt = ctl.NormalFilter(100)
        forces = rng.normal([0, 0.2, 1.5], 0.3, (450, 3))
        for f in forces:
            filt.push(f)
            expected = ctl.estimate_surface_normal(filt.forces())
            got = filt.mean() / np.linalg.norm(filt.mean())
            assert np.allclose(got, expected, atol=1e-9)


def make_state(p=(0, 0, 0), v=(0, 0, 0), f=(0, 0, 0)):
    s = robot.RobotState.at_rest(np.asarray(p, float))
    s.p_dot = np.asarray(v, dtype=float)
    s.f_c = np.asarray(f, dtype=float)
    return s


def refs(p_d=(0, 0, 0), v_d=(0, 0, 0), a_d=(0, 0, 0), f_d=(0, 0, 0)):
    return {"p_d": np.asarray(p_d, float), "p_dot_d": np.asarray(v_d, float),
            "p_ddot_d": np.asarray(a_d, float), "f_d": np.asarray(f_d, float)}


class TestMotionTorque:
    def test_unit_gain_case(self):
        # 10 mm error = 0.01 m, Kp=100 1/s^2, D=I -> 1 N
        cfg = ctl.ControllerConfig(Kp_m=[100.0] * 3, Kd_m=[0.0] * 3)
        out = ctl.motion_torque(make_state(), refs(p_d=(10.0, 0, 0)), cfg,
                                np.eye(3), np.ones(3))
        assert np.allclose(out, [1.0, 0, 0], atol=1e-12)

    def test_zero_error_zero_output(self):
        cfg = ctl.ControllerConfig()
        out = ctl.motion_torque(make_state(), refs(), cfg, np.eye(3), np.ones(3))
        assert np.allclose(out, 0.0)

    def test_projection_nullspace(self):
        cfg = ctl.ControllerConfig()
        om = np.diag([1.0, 1.0, 0.0])
        out = ctl.motion_torque(make_state(), refs(p_d=(0, 0, 25.0)), cfg,
                                om, np.ones(3))
        assert out[2] == 0.0


class TestForceTorque:
    def test_direct_eq_value(self):
        cfg = ctl.ControllerConfig(Kp_f=[0.5] * 3, Kv=[0.0] * 3)
        st_ = ctl.ControllerState.fresh(cfg)
        of = np.diag([0.0, 0.0, 1.0])
        out = ctl.force_torque([0, 0, 1.35], [0, 0, 1.0], st_, cfg, of,
                               np.zeros(3), dt=0.0)
        assert np.allclose(out, [0, 0, 1.525], atol=1e-12)

    def test_pure_feedforward_when_error_zero(self):
        cfg = ctl.ControllerConfig()
        st_ = ctl.ControllerState.fresh(cfg)
        f_d = np.array([0.3, 0.0, 1.3])
        n = unit(f_d)
        of, _ = ctl.projection_matrices(n)
        out = ctl.force_torque(f_d, f_d, st_, cfg, of, np.zeros(3), dt=0.0)
        assert np.allclose(out, of @ f_d, atol=1e-12)

    def test_integral_accumulation_closed_form(self):
        # constant error integrated for 1 s with Ki = 2 -> contribution 2*f_e
        cfg = ctl.ControllerConfig(Ki_f=[2.0] * 3, Kp_f=[0.0] * 3,
                                   Kv=[0.0] * 3, integral_clamp=100.0)
        st_ = ctl.ControllerState.fresh(cfg)
        f_e = np.array([0.0, 0.0, 0.4])
        of = np.diag([0.0, 0.0, 1.0])
        dt = 1e-3
        for _ in range(1000):
            out = ctl.force_torque(f_e, np.zeros(3), st_, cfg, of,
                                   np.zeros(3), dt=dt)
        # final value: f_d + Ki * integral = 0.4 + 2 * 0.4 = 1.2
        assert np.allclose(st_.f_e_integral, f_e, atol=1e-12)
        assert np.allclose(out, [0, 0, 1.2], atol=1e-9)

    def test_integral_clamped(self):
        cfg = ctl.ControllerConfig(integral_clamp=3.0)
        st_ = ctl.ControllerState.fresh(cfg)
        of = np.eye(3)
        for _ in range(5000):
            ctl.force_torque([0, 0, 10.0], [0, 0, 0.0], st_, cfg, of,
                             np.zeros(3), dt=1e-3)
            contrib = cfg.Ki_f * st_.f_e_integral
            assert np.linalg.norm(contrib) <= 3.0 + 1e-12

    def test_force_output_in_normal_span(self):
        cfg = ctl.ControllerConfig()
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = unit(rng.normal(size=3))
            of, _ = ctl.projection_matrices(n)
            st_ = ctl.ControllerState.fresh(cfg)
            out = ctl.force_torque(rng.normal(size=3), rng.normal(size=3),
                                   st_, cfg, of, rng.normal(size=3), dt=1e-3)
            residual = out - n * (n @ out)
            assert np.linalg.norm(residual) < 1e-12

    def test_motion_output_orthogonal_to_normal(self):
        cfg = ctl.ControllerConfig()
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = unit(rng.normal(size=3))
            _, om = ctl.projection_matrices(n)
            out = ctl.motion_torque(
                make_state(p=rng.normal(size=3), v=rng.normal(size=3)),
                refs(p_d=rng.normal(size=3) * 20), cfg, om,
                np.array([8.0, 6.0, 4.0]))
            assert abs(n @ out) < 1e-12


class TestControlStep:
    def test_gravity_compensation_at_rest(self, flat_phantom):
        cfg = ctl.ControllerConfig()
        st_ = ctl.ControllerState.fresh(cfg)
        plant = robot.PlantParams()
        state = make_state(p=(0, 0, 30.0))
        tau = ctl.control_step(state, refs(p_d=(0, 0, 30.0)), cfg, st_, plant)
        assert np.allclose(tau, plant.g, atol=1e-12)

    def test_hybrid_matches_public_ops(self):
        # the inlined fast path must equal the composed public operations
        cfg = ctl.ControllerConfig()
        plant = robot.PlantParams()
        rng = np.random.default_rng(21)
        for _ in range(100):
            f_c = rng.normal([0.2, -0.1, 1.8], 0.4)
            state = make_state(p=rng.normal(size=3), v=rng.normal(size=3) * 10,
                               f=f_c)
            r = refs(p_d=rng.normal(size=3) * 15, f_d=[0, 0, 1.35])

            st_a = ctl.ControllerState.fresh(cfg)
            st_a.detector.latched = True
            st_a.active_regime = ctl.HYBRID
            st_a.n_hat = unit([0.05, 0.0, 1.0])
            st_a.normal_history.push(f_c)
            tau_fast = ctl.control_step(state, r, cfg, st_a, plant)

            st_b = ctl.ControllerState.fresh(cfg)
            st_b.normal_history.push(f_c)
            st_b.normal_history.push(f_c)  # mirror the fast path's push
            n = unit(st_b.normal_history.mean())
            of, om = ctl.projection_matrices(n)
            tau_m = ctl.motion_torque(state, r, cfg, om, plant.D)
            tau_f = ctl.force_torque(r["f_d"], f_c, st_b, cfg, of,
                                     state.p_dot, plant.dt)
            tau_ref = tau_m - tau_f + plant.g - plant.B * (state.p_dot * 1e-3)
            assert np.allclose(tau_fast, tau_ref, atol=1e-10)

    def test_regime_transitions_reset_state(self):
        cfg = ctl.ControllerConfig()
        st_ = ctl.ControllerState.fresh(cfg)
        plant = robot.PlantParams()
        # contact trips the latch and seeds the normal
        state = make_state(f=(0.0, 0.0, 0.8))
        ctl.control_step(state, refs(f_d=[0, 0, 1.35]), cfg, st_, plant)
        assert st_.active_regime == ctl.HYBRID
        assert np.allclose(st_.n_hat, [0, 0, 1])
        st_.f_e_integral = np.array([0.0, 0.0, 0.5])
        # force release resets integral and history
        state = make_state(f=(0.0, 0.0, 0.1))
        ctl.control_step(state, refs(), cfg, st_, plant)
        assert st_.active_regime == ctl.FREE_MOTION
        assert np.allclose(st_.f_e_integral, 0.0)
        assert len(st_.normal_history) == 0

    def test_free_motion_step_response(self, quiet_config, flat_phantom):
        # 10 mm step in x: < 10% overshoot, settled within 0.5 s
        m = flat_phantom(k=1.0)
        quiet_config.experiment.start_pos = (0.0, 0.0, 30.0)
        s = SimSession(m, quiet_config, mode=1, seed=0)
        s.direct_ref = np.array([10.0, 0.0, 30.0])
        xs = []
        for _ in range(800):
            s.tick()
            xs.append(s.state.p[0])
        xs = np.array(xs)
        assert xs.max() < 11.0          # overshoot < 10%
        settled = np.abs(xs[500:] - 10.0) < 0.2
        assert settled.all()
        assert abs(xs[499] - 10.0) < 0.2  # reached band by 0.5 s

    def test_hybrid_holds_setpoint(self, quiet_config, default_model):
        quiet_config.experiment.start_pos = (25.0, 0.0, 14.0)
        s = SimSession(default_model, quiet_config, mode=1, seed=0)
        s.direct_ref = np.array([25.0, 0.0, 10.0])
        s.run(3.0)
        f_n = float(s.state.f_c @ s.ctrl_state.n_hat)
        assert abs(f_n - 1.35) < 0.01
