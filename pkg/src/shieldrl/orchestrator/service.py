"""Live oversight service: state stream, labeling endpoints, session export.

A single async loop steps the environment at a client-controllable rate and
broadcasts frames to every connected viewer; labels and blocks arrive over
POST and are applied at step boundaries.  The exported JSONL is directly
consumable as a Blocker training log.
"""

from __future__ import annotations

import asyncio
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from ..envs import Transition, make_env
from ..exploration import CorrelatedRandomPolicy
from .config import RunConfig
from .oversight import oversight_cost


@dataclass
class FrameRecord:
    ts: float
    state: dict
    transition: Transition
    action: list
    shield_p: float


class OversightSession:
    """Environment loop state shared between the stepper and the endpoints."""

    def __init__(self, config: RunConfig, fps: float = 20.0,
                 frame_retention: int = 50_000, shield_fn=None):
        self.config = config
        self.env = make_env(config.env, seed=config.seed,
                            near_obstacle_prob=config.near_obstacle_prob,
                            max_steps=config.oversight_max_episode_steps)
        self.rng = np.random.default_rng(config.seed + 1)
        self.policy = CorrelatedRandomPolicy(self.env.act_dim, self.rng)
        self.shield_fn = shield_fn
        self.fps = fps
        self.paused = False
        self.frame_retention = frame_retention
        self.frames: dict[int, FrameRecord] = {}
        self.labels: dict[int, dict] = {}
        self.blocks: set[int] = set()
        self.frame_idx = -1
        self.step_count = 0
        self._force_reset = False
        self.env.reset()
        self.policy.reset()

    # ------------------------------------------------------------------
    def step_once(self) -> dict:
        if self._force_reset or self.env.needs_reset:
            self.env.reset()
            self.policy.reset()
            self._force_reset = False
        state = self.env.state.copy()
        obs = self.env.observation(state)
        action = self.policy()
        shield_p = float(self.shield_fn(obs)) if self.shield_fn else 0.0
        res = self.env.step(action)
        label = self.env.oracle_label(state, res.next_state)
        tr = Transition(obs, action, self.env.observation(res.next_state),
                        res.reward, res.done, label)
        self.frame_idx += 1
        self.step_count += 1
        self.frames[self.frame_idx] = FrameRecord(
            ts=time.monotonic(), state=self.env.state_to_dict(state),
            transition=tr, action=[float(v) for v in action], shield_p=shield_p)
        if len(self.frames) > self.frame_retention:
            self.frames.pop(min(self.frames))
        return {
            "frame_idx": self.frame_idx,
            "env_state": self.frames[self.frame_idx].state,
            "proposed_action": self.frames[self.frame_idx].action,
            "shield_p": shield_p,
        }

    def apply_label(self, frame_idx: int, catastrophe: int) -> float:
        frame = self.frames.get(frame_idx)
        if frame is None:
            raise KeyError(frame_idx)
        latency = time.monotonic() - frame.ts
        self.labels[frame_idx] = {"c": int(catastrophe), "latency": latency}
        return latency

    def apply_block(self, frame_idx: int) -> float:
        latency = self.apply_label(frame_idx, 1)
        self.blocks.add(frame_idx)
        self._force_reset = True  # discard the in-flight action at the boundary
        return latency

    def export_rows(self):
        source = self.config.oversight_source
        for idx in sorted(self.frames):
            frame = self.frames[idx]
            row = frame.transition.to_json_dict()
            human = self.labels.get(idx)
            if human is not None:
                row["c"] = human["c"]
                row["source"] = "human"
            else:
                row["source"] = "oracle" if source == "oracle" else "unlabeled"
                if source != "oracle":
                    row["c"] = 0
            row["frame_idx"] = idx
            yield row

    def cost_summary(self) -> dict:
        latencies = [v["latency"] for v in self.labels.values()]
        mean_latency = float(np.mean(latencies)) if latencies else 0.0
        return {
            "labels": len(self.labels),
            "mean_latency_seconds": mean_latency,
            "total_cost_seconds": oversight_cost(mean_latency, len(self.labels)),
        }


class LabelBody(BaseModel):
    frame_idx: int
    catastrophe: int = Field(ge=0, le=1)


class BlockBody(BaseModel):
    frame_idx: int


class PacingBody(BaseModel):
    fps: float = Field(gt=0, le=1000)


def create_app(session: OversightSession, ui_dir=None) -> FastAPI:
    clients: list[asyncio.Queue] = []

    async def loop():
        while True:
            if not session.paused:
                frame = session.step_once()
                for q in clients:
                    if q.full():
                        try:
                            q.get_nowait()  # drop-oldest
                        except asyncio.QueueEmpty:
                            pass
                    q.put_nowait(frame)
            await asyncio.sleep(1.0 / session.fps)

    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(app):
        task = asyncio.create_task(loop())
        try:
            yield
        finally:
            task.cancel()

    app = FastAPI(title="oversight service", lifespan=lifespan)
    app.state.session = session

    @app.get("/status")
    def status():
        return {
            "frame_idx": session.frame_idx,
            "step_count": session.step_count,
            "paused": session.paused,
            "fps": session.fps,
            "labels": len(session.labels),
            "env": session.config.env,
        }

    @app.get("/meta")
    def meta():
        env = session.env
        info = {"env": session.config.env, "obs_dim": env.obs_dim,
                "act_dim": env.act_dim}
        if hasattr(env, "obstacle_center"):
            info["obstacle"] = {"center": env.obstacle_center.tolist(),
                                "half_w": env.half_w, "half_h": env.half_h,
                                "target_radius": env.target_radius}
        else:
            info["bar"] = {"a": env.bar_a.tolist(), "b": env.bar_b.tolist(),
                           "target_radius": env.target_radius}
        return info

    @app.post("/pause")
    def pause():
        session.paused = True
        return {"paused": True, "step_count": session.step_count}

    @app.post("/resume")
    def resume():
        session.paused = False
        return {"paused": False}

    @app.post("/pacing")
    def pacing(body: PacingBody):
        session.fps = body.fps
        return {"fps": session.fps}

    @app.post("/label")
    def label(body: LabelBody):
        try:
            latency = session.apply_label(body.frame_idx, body.catastrophe)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown frame {body.frame_idx}")
        return {"frame_idx": body.frame_idx, "latency_seconds": latency}

    @app.post("/block")
    def block(body: BlockBody):
        try:
            latency = session.apply_block(body.frame_idx)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown frame {body.frame_idx}")
        return {"frame_idx": body.frame_idx, "blocked": True,
                "latency_seconds": latency}

    @app.get("/export", response_class=PlainTextResponse)
    def export():
        return "\n".join(json.dumps(row) for row in session.export_rows()) + "\n"

    @app.get("/cost")
    def cost():
        return session.cost_summary()

    @app.websocket("/ws/frames")
    async def frames_ws(ws: WebSocket):
        await ws.accept()
        q: asyncio.Queue = asyncio.Queue(maxsize=512)
        clients.append(q)
        try:
            while True:
                frame = await q.get()
                await ws.send_text(json.dumps(frame))
        except Exception:
            pass
        finally:
            clients.remove(q)

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve_oversight(config: RunConfig, port: int = 8008, fps: float = 20.0,
                    ui_dir=None):  # pragma: no cover - exercised manually
    import uvicorn
    session = OversightSession(config, fps=fps)
    app = create_app(session, ui_dir=ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port)
