"""Interactive operator service.

Bridges one live simulation session to browser consoles over a versioned
websocket protocol: a `hello` document on connect (scene geometry, fixture
box, setpoint), `StateFrame` JSON at up to 50 Hz, and operator commands
(master deltas, clutch, landmark recording, mode selection, scan start)
inbound.  The sim runs on its own thread at the plant rate; frames are
snapshots taken under the session lock, so the control loop never blocks
on a slow client.
"""

import asyncio
import json
import threading
import time
from collections import deque

import numpy as np

from . import autoscan as asn
from . import phantom as ph
from .config import RunConfig
from .simulate import SimSession

SCHEMA_VERSION = 1
FRAME_RATE = 50.0

MODE4_LANDMARK_ORDER = ("sternoclavicular_left", "sternoclavicular_right",
                        "laryngeal_prominence")


class PacedSession(SimSession):
    """SimSession that holds a lock per tick and paces to wall time."""

    def __init__(self, *args, lock=None, speed=1.0, **kw):
        super().__init__(*args, **kw)
        self._tick_lock = lock or threading.Lock()
        self._speed = speed
        self._wall_anchor = None
        self._paced_ticks = 0

    def tick(self):
        with self._tick_lock:
            state = super().tick()
        self._paced_ticks += 1
        if self._speed > 0 and self._paced_ticks % 20 == 0:
            if self._wall_anchor is None:
                self._wall_anchor = (time.monotonic(), self.t)
            t0, sim0 = self._wall_anchor
            target = t0 + (self.t - sim0) / self._speed
            lag = target - time.monotonic()
            if lag > 0:
                time.sleep(lag)
        return state


class OperatorService:
    """Owns the sim thread and the command/frame exchange."""

    def __init__(self, model, config=None, speed=1.0, seed=0):
        self.model = model
        self.config = config or RunConfig()
        self.speed = speed
        self._seed = seed
        self._lock = threading.Lock()
        self._commands = deque()
        self._stop = threading.Event()
        self._thread = None
        self.mode = 1
        self.session = None
        self.mode4_landmarks = []
        self.scan_requested = False
        self.scan_state = None
        self.recorded_estimate = None
        self._reset_session()

    # -- lifecycle -----------------------------------------------------------

    def _reset_session(self):
        self._seed += 1
        self.session = PacedSession(self.model, self.config, mode=self.mode,
                                    seed=self._seed, lock=self._lock,
                                    speed=self.speed)
        self.mode4_landmarks = []
        self.scan_requested = False
        self.scan_state = None
        self.recorded_estimate = None

    def start(self):
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _loop(self):
        while not self._stop.is_set():
            self._drain_commands()
            if self.scan_requested:
                self._run_scan()
                continue
            self.session.tick()

    def _run_scan(self):
        self.scan_requested = False
        lm = dict(zip(MODE4_LANDMARK_ORDER, self.mode4_landmarks))
        plan = asn.plan_scan_line(lm["sternoclavicular_left"],
                                  lm["sternoclavicular_right"],
                                  lm["laryngeal_prominence"],
                                  speed=self.config.scan.speed)
        self.scan_state = {"active": True, "progress": 0.0, "n_samples": 0,
                           "done": False, "estimate": None}
        session = self.session

        total = plan.length
        orig_tick = session.tick

        def progress_tick():
            state = orig_tick()
            if session.direct_ref is not None and total > 0:
                along = float(np.linalg.norm(
                    session.direct_ref[:2] - plan.start[:2]))
                self.scan_state["progress"] = min(1.0, along / total)
            self.scan_state["n_samples"] = len(session.samples)
            return state

        session.tick = progress_tick
        try:
            profile = asn.execute_scan(plan, session)
            result = asn.locate_minimum(profile, refine=self.config.scan.refine)
            self.recorded_estimate = result.estimate
            self.scan_state.update(active=False, done=True, progress=1.0,
                                   estimate=result.estimate.tolist())
        except ValueError as exc:
            self.scan_state.update(active=False, done=True, error=str(exc))
        finally:
            session.tick = orig_tick

    # -- commands -------------------------------------------------------------

    def submit(self, cmd):
        self._commands.append(cmd)

    def _drain_commands(self):
        while self._commands:
            cmd = self._commands.popleft()
            self._apply(cmd)

    def _apply(self, cmd):
        kind = cmd.get("type")
        session = self.session
        if kind == "master_delta":
            session.move_master(np.asarray(cmd["d"], dtype=float))
        elif kind == "clutch":
            session.set_clutch(bool(cmd["closed"]))
        elif kind == "mode_select":
            mode = int(cmd["mode"])
            if mode in (1, 2, 3, 4):
                self.mode = mode
                with self._lock:
                    self._reset_session()
                self.session.set_excitation(self.mode == 3)
        elif kind == "record_landmark":
            x, y, _ = session.state.p
            point = session.surface_point(x, y)
            if self.mode == 4:
                if len(self.mode4_landmarks) < 3:
                    self.mode4_landmarks.append(point)
            else:
                self.recorded_estimate = point
        elif kind == "start_scan":
            if self.mode == 4 and len(self.mode4_landmarks) == 3 \
                    and self.scan_state is None:
                self.scan_requested = True

    # -- outbound documents ----------------------------------------------------

    def hello(self):
        model = self.model
        h = model.height
        stride = 2  # decimate the surface grid for the scene view
        values = h.values[::stride, ::stride]
        return {
            "type": "hello",
            "schema_version": SCHEMA_VERSION,
            "workspace": {"x": list(model.x_bounds), "y": list(model.y_bounds),
                          "z": list(model.z_bounds)},
            "surface": {
                "x0": h.x0, "y0": h.y0,
                "dx": h.dx * stride, "dy": h.dy * stride,
                "nx": values.shape[1], "ny": values.shape[0],
                "values": [round(float(v), 3) for v in values.ravel()],
            },
            "landmarks": {k: v.tolist() for k, v in model.landmarks.items()},
            "fixture": {"b_min": self.session.fixture.b_min.tolist(),
                        "b_max": self.session.fixture.b_max.tolist()},
            "setpoint": self.config.controller.f_hold,
            "mode": self.mode,
        }

    def frame(self):
        with self._lock:
            s = self.session
            st = s.state
            doc = {
                "type": "frame",
                "v": SCHEMA_VERSION,
                "t": round(s.t, 4),
                "mode": self.mode,
                "probe": [round(float(v), 3) for v in st.p],
                "force": [round(float(v), 4) for v in st.f_c],
                "fixture_force": [round(float(v), 4) for v in s.fixture_force],
                "in_contact": bool(st.in_contact),
                "clutch": bool(s.master.clutch_closed),
                "landmarks_recorded": len(self.mode4_landmarks),
                "recorded_estimate": (None if self.recorded_estimate is None
                                      else [round(float(v), 3)
                                            for v in self.recorded_estimate]),
                "map": s.map_snapshot() if self.mode in (3, 4) else None,
                "scan": dict(self.scan_state) if self.mode == 4 else None,
            }
        return doc


def create_app(model, config=None, speed=1.0):
    """FastAPI app wrapping one OperatorService."""
    from contextlib import asynccontextmanager

    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import HTMLResponse

    service = OperatorService(model, config, speed=speed)

    @asynccontextmanager
    async def lifespan(app):
        service.start()
        yield
        service.stop()

    app = FastAPI(lifespan=lifespan)
    app.state.service = service

    @app.get("/")
    async def index():
        return HTMLResponse(
            "<html><body><h3>palpsim operator service</h3>"
            "<p>websocket endpoint: <code>/ws</code> (schema v1); the"
            " browser console in <code>frontend/</code> connects here.</p>"
            "</body></html>")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        await ws.send_json(service.hello())

        async def sender():
            while True:
                await ws.send_json(service.frame())
                await asyncio.sleep(1.0 / FRAME_RATE)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    cmd = json.loads(raw)
                except json.JSONDecodeError:
                    continue
                service.submit(cmd)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()

    return app


def serve(model, config=None, host="127.0.0.1", port=8400, speed=1.0):
    import uvicorn
    app = create_app(model, config, speed=speed)
    uvicorn.run(app, host=host, port=port, log_level="warning")
