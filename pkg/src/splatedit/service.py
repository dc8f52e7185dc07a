"""HTTP editing service: render, pick, remove, undo, inpaint.

Single-writer / multi-reader session: GETs are side-effect free and read an
immutable scene snapshot; mutations serialize behind a non-blocking lock and
answer 409 when one is already in flight. The inpaint endpoint streams
newline-delimited JSON progress events and commits its result at the end.
"""
from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import Response, StreamingResponse
from PIL import Image

from .config import Config
from .edit import (EditError, make_virtual_views, pick_object, remove_object,
                   virtual_trajectory)
from .files import camera_from_dict, CameraError
from .inpaint import (BuiltinInpainter, ExternalDirectoryInpainter,
                      InpaintConfig, InpaintError, init_gaussians_from_rgbd,
                      optimize_inpaint, recursive_inpaint)
from .raster import render
from .scene import GaussianScene


@dataclass
class Session:
    scene: GaussianScene
    cameras: list
    config: Config
    undo_stack: list = field(default_factory=list)  # (scene_before, record)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _png_response(array_u8, mode=None, headers=None) -> Response:
    img = Image.fromarray(array_u8) if mode is None else Image.fromarray(array_u8, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png",
                    headers=headers or {})


def _resolve_camera(session: Session, view: str):
    try:
        idx = int(view)
    except ValueError:
        try:
            return camera_from_dict(json.loads(view))
        except (json.JSONDecodeError, KeyError, CameraError) as exc:
            raise HTTPException(400, f"malformed pose: {exc}")
    if not (0 <= idx < len(session.cameras)):
        raise HTTPException(404, f"unknown view {idx}")
    return session.cameras[idx]


def create_app(scene: GaussianScene, cameras, config: Config | None = None) -> FastAPI:
    session = Session(scene=scene, cameras=list(cameras),
                      config=config or Config())
    app = FastAPI(title="splatedit")
    app.state.session = session

    @app.get("/scene/meta")
    def scene_meta():
        s = session.scene
        ids = []
        if s.object_ids is not None:
            vals, counts = np.unique(s.object_ids[s.object_ids > 0],
                                     return_counts=True)
            ids = [{"id": int(v), "splats": int(c)}
                   for v, c in zip(vals, counts)]
        cam = session.cameras[0] if session.cameras else None
        return {
            "splat_count": len(s),
            "objects": ids,
            "image_size": ([cam.width, cam.height] if cam else None),
            "views": len(session.cameras),
            "undo_depth": len(session.undo_stack),
        }

    @app.get("/render")
    def render_view(view: str = "0", channel: str = "color"):
        if channel not in ("color", "depth", "id"):
            raise HTTPException(400, f"unknown channel {channel!r}")
        cam = _resolve_camera(session, view)
        snapshot = session.scene
        out = render(snapshot, cam, channels=(channel,))
        if channel == "color":
            u8 = (np.clip(out.color, 0, 1) * 255.0 + 0.5).astype(np.uint8)
            return _png_response(u8)
        if channel == "depth":
            depth = out.depth_normalized
            peak = float(depth.max()) if depth.size else 0.0
            scale = peak / 65535.0 if peak > 0 else 1.0
            counts = np.clip(np.round(depth / scale), 0, 65535).astype(np.uint16)
            return _png_response(counts, headers={"X-Depth-Scale": str(scale)})
        idm = out.id_map if out.id_map is not None else np.zeros(
            (cam.height, cam.width), np.int32)
        return _png_response(idm.astype(np.uint8), mode="L")

    @app.get("/pick")
    def pick(view: str = "0", x: int = 0, y: int = 0):
        cam = _resolve_camera(session, view)
        try:
            got = pick_object(session.scene, cam, x, y)
        except EditError as exc:
            raise HTTPException(400, str(exc))
        return {"object_id": got}

    @app.post("/remove")
    async def remove(request: Request):
        body = await request.json()
        ids = body.get("ids")
        hull = bool(body.get("hull", False))
        if not isinstance(ids, list) or not ids:
            raise HTTPException(400, "body must carry a non-empty 'ids' list")
        if not session.lock.acquire(blocking=False):
            raise HTTPException(409, "another mutation is in flight")
        try:
            before = session.scene
            try:
                edited, record = remove_object(before, ids, hull=hull)
            except EditError as exc:
                raise HTTPException(404, str(exc))
            session.undo_stack.append((before, record))
            session.scene = edited
            return {"removed_ids": record.removed_ids,
                    "removed_splats": int(record.removed_indices.size),
                    "splat_count": len(edited)}
        finally:
            session.lock.release()

    @app.post("/undo")
    def undo():
        if not session.lock.acquire(blocking=False):
            raise HTTPException(409, "another mutation is in flight")
        try:
            if not session.undo_stack:
                raise HTTPException(400, "nothing to undo")
            before, _ = session.undo_stack.pop()
            session.scene = before
            return {"splat_count": len(before),
                    "undo_depth": len(session.undo_stack)}
        finally:
            session.lock.release()

    @app.post("/inpaint")
    async def inpaint(request: Request):
        body = await request.json()
        n_views = int(body.get("views", session.config.trajectory.views))
        kind = body.get("inpainter", "builtin")
        iterations = int(body.get("iterations",
                                  session.config.inpaint.iterations))
        if not session.undo_stack:
            raise HTTPException(400, "no removal to inpaint")
        if not session.lock.acquire(blocking=False):
            raise HTTPException(409, "another mutation is in flight")

        scene_before, record = session.undo_stack[-1]
        scene_after = session.scene
        filler = (BuiltinInpainter() if kind == "builtin"
                  else ExternalDirectoryInpainter(kind))

        import queue

        q: "queue.Queue" = queue.Queue()
        cancel = threading.Event()
        outcome: dict = {}

        class _Cancelled(Exception):
            pass

        def worker():
            try:
                traj = virtual_trajectory(scene_before, scene_after,
                                          session.cameras,
                                          record.removed_ids[0], count=n_views)
                views = make_virtual_views(scene_before, scene_after, traj)
                results = recursive_inpaint(views, filler)
                q.put(("filled", len(views)))
                seed = int(np.argmax([v.mask.sum() for v in views]))
                new = init_gaussians_from_rgbd(
                    results[seed][0], results[seed][1], views[seed].mask,
                    views[seed].camera, session.config.inpaint)
                if len(new) == 0:
                    outcome["final"] = scene_after
                    outcome["added"] = 0
                    q.put(("done",))
                    return

                def progress(it, loss):
                    if cancel.is_set():
                        raise _Cancelled()
                    if it % 25 == 0 or it == iterations - 1:
                        q.put(("iteration", it, loss))

                icfg = InpaintConfig(
                    structural_weight=session.config.inpaint.structural_weight,
                    iterations=iterations, seed=session.config.inpaint.seed)
                final = optimize_inpaint(scene_after, new,
                                         list(zip(views, results)), icfg,
                                         progress_cb=progress)
                outcome["final"] = final
                outcome["added"] = len(new)
                q.put(("done",))
            except _Cancelled:
                q.put(("cancelled",))
            except (EditError, InpaintError, ValueError) as exc:
                q.put(("error", str(exc)))

        thread = threading.Thread(target=worker, daemon=True)

        def run():
            try:
                yield json.dumps({"event": "start", "views": n_views,
                                  "iterations": iterations}) + "\n"
                thread.start()
                while True:
                    msg = q.get()
                    if msg[0] == "iteration":
                        yield json.dumps({"event": "iteration",
                                          "iteration": msg[1],
                                          "loss": msg[2]}) + "\n"
                    elif msg[0] == "filled":
                        yield json.dumps({"event": "filled",
                                          "views": msg[1]}) + "\n"
                    elif msg[0] == "done":
                        session.scene = outcome["final"]
                        yield json.dumps({
                            "event": "done", "added": outcome["added"],
                            "splat_count": len(outcome["final"])}) + "\n"
                        return
                    elif msg[0] == "error":
                        yield json.dumps({"event": "error",
                                          "message": msg[1]}) + "\n"
                        return
                    else:  # cancelled
                        return
            finally:
                cancel.set()
                if thread.is_alive():
                    thread.join()
                session.lock.release()

        return StreamingResponse(run(), media_type="application/x-ndjson")

    return app
