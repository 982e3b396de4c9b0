import time

import numpy as np
import pytest

fastapi = pytest.importorskip("fastapi")
from fastapi.testclient import TestClient

from palpsim import phantom as ph
from palpsim.config import RunConfig
from palpsim.service import OperatorService, create_app


@pytest.fixture(scope="module")
def model():
    return ph.load_default_neck()


@pytest.fixture
def app(model):
    cfg = RunConfig()
    cfg.plant.sensor_noise_sigma = 0.0
    # fast-forward pacing: quick tests, but the sim thread still
    # sleeps so the frame sender is never starved
    return create_app(model, cfg, speed=30.0)


def drain_until(ws, pred, n_max=400):
    for _ in range(n_max):
        doc = ws.receive_json()
        if doc.get("type") == "frame" and pred(doc):
            return doc
    raise AssertionError("condition not reached in frame stream")


class TestProtocol:
    def test_hello_schema(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                hello = ws.receive_json()
                assert hello["type"] == "hello"
                assert hello["schema_version"] == 1
                assert set(hello["workspace"]) == {"x", "y", "z"}
                surf = hello["surface"]
                assert len(surf["values"]) == surf["nx"] * surf["ny"]
                assert "laryngeal_prominence" in hello["landmarks"]
                assert hello["setpoint"] == pytest.approx(1.35)

    def test_frames_mode1_have_no_map(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                frame = drain_until(ws, lambda f: True)
                assert frame["mode"] == 1
                assert frame["map"] is None
                assert frame["scan"] is None
                assert {"t", "probe", "force", "in_contact",
                        "clutch"} <= set(frame)

    def test_mode3_frames_carry_map(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                ws.send_json({"type": "mode_select", "mode": 3})
                frame = drain_until(ws, lambda f: f["mode"] == 3)
                assert frame["map"] is not None
                m = frame["map"]
                assert len(m["values"]) == m["nx"] * m["ny"]
                assert "probe_xy" in m

    def test_clutched_master_moves_probe(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                f0 = drain_until(ws, lambda f: True)
                ws.send_json({"type": "clutch", "closed": True})
                for _ in range(40):
                    ws.send_json({"type": "master_delta", "d": [0.5, 0.0, 0.0]})
                moved = drain_until(
                    ws, lambda f: f["probe"][0] > f0["probe"][0] + 3.0)
                assert moved["clutch"] is True

    def test_record_landmark_mode1(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                ws.send_json({"type": "record_landmark"})
                frame = drain_until(
                    ws, lambda f: f["recorded_estimate"] is not None)
                est = frame["recorded_estimate"]
                assert len(est) == 3

    def test_mode4_landmark_protocol(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                ws.send_json({"type": "mode_select", "mode": 4})
                drain_until(ws, lambda f: f["mode"] == 4)
                for i in range(3):
                    ws.send_json({"type": "record_landmark"})
                    drain_until(ws, lambda f: f["landmarks_recorded"] == i + 1)
                # a fourth record is ignored
                ws.send_json({"type": "record_landmark"})
                frame = drain_until(ws, lambda f: True)
                assert frame["landmarks_recorded"] == 3


class TestServiceUnit:
    def test_mode_select_resets_session(self, model):
        svc = OperatorService(model, RunConfig(), speed=0.0)
        svc._apply({"type": "mode_select", "mode": 3})
        assert svc.mode == 3
        assert svc.session.excitation_on
        svc._apply({"type": "mode_select", "mode": 1})
        assert not svc.session.excitation_on
        assert svc.recorded_estimate is None

    def test_start_scan_requires_three_landmarks(self, model):
        svc = OperatorService(model, RunConfig(), speed=0.0)
        svc._apply({"type": "mode_select", "mode": 4})
        svc._apply({"type": "start_scan"})
        assert not svc.scan_requested
        lm = model.landmarks
        for name in ("sternoclavicular_left", "sternoclavicular_right",
                     "laryngeal_prominence"):
            svc.mode4_landmarks.append(lm[name].copy())
        svc._apply({"type": "start_scan"})
        assert svc.scan_requested

    def test_malformed_commands_ignored(self, model):
        svc = OperatorService(model, RunConfig(), speed=0.0)
        svc._apply({"type": "warp_drive"})
        svc._apply({})
        assert svc.mode == 1

    @pytest.mark.slow
    def test_scan_runs_to_completion(self, model):
        cfg = RunConfig()
        cfg.plant.sensor_noise_sigma = 0.0
        svc = OperatorService(model, cfg, speed=0.0)
        svc._apply({"type": "mode_select", "mode": 4})
        lm = model.landmarks
        for name in ("sternoclavicular_left", "sternoclavicular_right",
                     "laryngeal_prominence"):
            svc.mode4_landmarks.append(lm[name].copy())
        svc._apply({"type": "start_scan"})
        svc.scan_requested = True
        svc._run_scan()
        assert svc.scan_state["done"]
        est = np.asarray(svc.scan_state["estimate"])
        gt = ph.ground_truth_center(model)
        assert np.linalg.norm(est - gt) < 2.0
