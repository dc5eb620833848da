"""HTTP studio service: inversion jobs, synchronous caricature generation,
and style-bank management over JSON + PNG.

Models are read-only; the only persistent state is the job ledger, the latent
store (inversion results keyed by source-image content hash + config hash, so
re-uploading the same photo is idempotent), and the style bank. Generation is
deterministic for identical requests: stored latents carry their optimized
noise bank, and inline codes use a zero or seed-derived bank.
"""

from __future__ import annotations

import hashlib
import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException, Request, Response, UploadFile
from pydantic import BaseModel

from .config import Config
from .exaggeration import CariGANModel, load_carigan
from .imageio import center_crop_resize, decode_image, encode_png, resize
from .inversion import invert, load_inversion, save_inversion
from .manipulation import EditDirection, StyleBank, apply_direction, curate_styles, load_direction
from .synthesis import SynthesisStack, load_stack, zero_noise, random_noise

MAX_ALPHA_ABS = 16.0


@dataclass
class ServiceAssets:
    photo: SynthesisStack
    cari: SynthesisStack
    p2c: CariGANModel
    directions: dict[str, EditDirection] = field(default_factory=dict)

    @classmethod
    def load(cls, assets_dir) -> "ServiceAssets":
        assets_dir = Path(assets_dir)
        directions = {}
        ddir = assets_dir / "directions"
        if ddir.is_dir():
            for path in sorted(ddir.glob("*.npz")):
                d = load_direction(path)
                directions[d.name] = d
        return cls(
            photo=load_stack(assets_dir / "photo_stack.npz"),
            cari=load_stack(assets_dir / "cari_stack.npz"),
            p2c=load_carigan(assets_dir / "p2c.npz"),
            directions=directions,
        )


class GenerationRequest(BaseModel):
    latent_id: str | None = None
    code: list[list[float]] | None = None
    style_id: str | None = None
    alphas: list[float] = []
    edits: list[tuple[str, float]] = []
    output_size: int | None = None
    noise_seed: int | None = None


class CurateRequest(BaseModel):
    n: int = 8
    psi: float = 0.7
    seed: int = 0


class ServiceState:
    def __init__(self, assets: ServiceAssets, cfg: Config, work_dir, studio_dir=None):
        self.assets = assets
        self.cfg = cfg
        self.studio_dir = studio_dir
        self.work_dir = Path(work_dir)
        self.latent_dir = self.work_dir / "latents"
        self.latent_dir.mkdir(parents=True, exist_ok=True)
        self.bank = StyleBank(self.work_dir / "styles")
        self.jobs: dict[str, dict] = {}
        self.jobs_lock = threading.Lock()
        self.queue: queue.Queue = queue.Queue(maxsize=cfg.service.queue_size)
        self.workers: list[threading.Thread] = []
        self._config_digest = hashlib.sha256(
            json.dumps({"inversion": cfg.inversion.__dict__, "model": cfg.model.__dict__}, sort_keys=True,
                       default=str).encode()).hexdigest()[:12]

    def latent_key(self, image_bytes: bytes) -> str:
        return hashlib.sha256(image_bytes + self._config_digest.encode()).hexdigest()[:16]

    def latent_path(self, key: str) -> Path:
        return self.latent_dir / f"{key}.npz"

    def start_workers(self) -> None:
        if self.workers:
            return
        for i in range(self.cfg.service.workers):
            t = threading.Thread(target=self._worker, name=f"invert-worker-{i}", daemon=True)
            t.start()
            self.workers.append(t)

    def _set_job(self, job_id: str, **fields) -> None:
        with self.jobs_lock:
            self.jobs[job_id].update(fields, updated=time.time())

    def _worker(self) -> None:
        while True:
            job_id, target, key = self.queue.get()
            self._set_job(job_id, status="running")
            try:
                result = invert(self.assets.photo, target, self.cfg.inversion)
                save_inversion(self.latent_path(key), result, source_key=key)
                self._set_job(job_id, status="done", latent_id=key)
            except Exception as exc:  # noqa: BLE001 - job failures are reported, not fatal
                self._set_job(job_id, status="failed", error=str(exc))
            finally:
                self.queue.task_done()

    def submit_inversion(self, image_bytes: bytes) -> str:
        target = center_crop_resize(decode_image(image_bytes), self.assets.photo.resolution)
        key = self.latent_key(image_bytes)
        job_id = uuid.uuid4().hex[:12]
        record = {"job_id": job_id, "kind": "invert", "status": "queued",
                  "created": time.time(), "updated": time.time()}
        with self.jobs_lock:
            self.jobs[job_id] = record
        if self.latent_path(key).exists():
            self._set_job(job_id, status="done", latent_id=key)
            return job_id
        try:
            self.queue.put_nowait((job_id, target, key))
        except queue.Full:
            with self.jobs_lock:
                del self.jobs[job_id]
            raise HTTPException(status_code=503, detail="inversion queue full") from None
        return job_id

    def resolve_code(self, req: GenerationRequest) -> tuple[torch.Tensor, list[torch.Tensor]]:
        model = self.assets.p2c
        n_layers = model.stack.n_style_layers
        if req.latent_id is not None:
            path = self.latent_path(req.latent_id)
            if not path.exists():
                raise HTTPException(status_code=404, detail=f"unknown latent_id {req.latent_id!r}")
            result = load_inversion(path)
            return result.code, result.noise
        if req.code is not None:
            code = torch.tensor(req.code, dtype=torch.float32)
            if code.shape != (n_layers, model.stack.cfg.d_w):
                raise HTTPException(
                    status_code=422,
                    detail=f"code must be {n_layers}x{model.stack.cfg.d_w}, got {tuple(code.shape)}")
            if req.noise_seed is None:
                noise = zero_noise(model.stack.n_scales)
            else:
                noise = random_noise(model.stack.n_scales, 1,
                                     torch.Generator().manual_seed(req.noise_seed))
            return code, noise
        raise HTTPException(status_code=422, detail="request needs latent_id or code")

    def normalized_alphas(self, alphas: list[float]) -> tuple[float, ...]:
        p = self.assets.p2c.p
        vals = list(alphas)[:p] + [0.0] * max(0, p - len(alphas))
        for a in vals:
            if not (abs(a) <= MAX_ALPHA_ABS):  # also rejects NaN
                raise HTTPException(status_code=422, detail=f"invalid alpha {a!r}")
        return tuple(float(a) for a in vals)

    def generate(self, req: GenerationRequest) -> bytes:
        code, noise = self.resolve_code(req)
        alphas = self.normalized_alphas(req.alphas)
        for name, magnitude in req.edits:
            direction = self.assets.directions.get(name)
            if direction is None:
                raise HTTPException(status_code=404, detail=f"unknown direction {name!r}")
            try:
                code = apply_direction(code, direction, magnitude)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from None
        style_code = None
        if req.style_id is not None:
            try:
                style_code = self.bank.get(req.style_id).code
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown style_id {req.style_id!r}") from None
        with torch.no_grad():
            image, _ = self.assets.p2c.forward_caricature(code, noise, style_code=style_code, alphas=alphas)
        img = image.squeeze(0)
        if req.output_size is not None:
            if not 8 <= req.output_size <= 2048:
                raise HTTPException(status_code=422, detail="output_size out of range")
            img = resize(img, req.output_size)
        return encode_png(img)


def create_app(state: ServiceState) -> FastAPI:
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_app):
        state.start_workers()
        yield

    app = FastAPI(title="carikit studio service", lifespan=lifespan)
    app.state.service = state

    @app.post("/invert", status_code=202)
    async def post_invert(file: UploadFile, request: Request):
        data = await file.read()
        if len(data) > state.cfg.service.max_upload_bytes:
            raise HTTPException(status_code=413, detail="upload too large")
        try:
            decode_image(data)
        except Exception:
            raise HTTPException(status_code=400, detail="undecodable image") from None
        job_id = state.submit_inversion(data)
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        with state.jobs_lock:
            record = state.jobs.get(job_id)
            if record is None:
                raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
            return dict(record)

    @app.post("/caricature")
    def post_caricature(req: GenerationRequest):
        return Response(content=state.generate(req), media_type="image/png")

    @app.get("/styles")
    def get_styles():
        entries = []
        for entry_id in state.bank.ids():
            entry = state.bank.get(entry_id)
            entries.append({"id": entry.id, "metadata": entry.metadata})
        return {"styles": entries}

    @app.get("/styles/{style_id}/thumbnail")
    def get_thumbnail(style_id: str):
        try:
            entry = state.bank.get(style_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown style_id {style_id!r}") from None
        return Response(content=entry.thumbnail_png, media_type="image/png")

    @app.delete("/styles/{style_id}")
    def delete_style(style_id: str):
        try:
            state.bank.delete(style_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown style_id {style_id!r}") from None
        return {"deleted": style_id}

    @app.post("/styles/curate")
    def post_curate(req: CurateRequest):
        if req.n < 1:
            raise HTTPException(status_code=422, detail="n must be >= 1")
        if not 0 <= req.psi <= 1:
            raise HTTPException(status_code=422, detail="psi must be in [0, 1]")
        entries = curate_styles(state.assets.cari, req.n, req.psi, bank=state.bank, seed=req.seed)
        return {"ids": [e.id for e in entries]}

    @app.get("/meta")
    def get_meta():
        model = state.assets.p2c
        return {
            "resolution": model.stack.resolution,
            "n_scales": model.stack.n_scales,
            "blocks": model.p,
            "directions": sorted(state.assets.directions),
        }

    studio_dist = Path(state.studio_dir) if state.studio_dir else \
        Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if studio_dist.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/studio", StaticFiles(directory=studio_dist, html=True), name="studio")

    return app
