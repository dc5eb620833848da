"""Appearance and semantics controls on W+ codes.

Style mixing splices fine-layer entries from a reference code onto a content
code. The style bank is a directory-backed store of curated fine-style codes
with thumbnails. Edit directions are unit vectors in W (or W+) found by a
linear separator over labeled codes, applied with a magnitude and an optional
layer mask.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .imageio import encode_png
from .synthesis import STYLES_PER_SCALE, SynthesisStack, broadcast_w, sample_codes, zero_noise


def style_mix(content: torch.Tensor, reference: torch.Tensor, p: int) -> torch.Tensor:
    """Coarse entries (scales <= p) from content, fine entries from reference."""
    if content.shape != reference.shape:
        raise ValueError(f"code shapes differ: {tuple(content.shape)} vs {tuple(reference.shape)}")
    n_layers = content.shape[-2]
    cut = STYLES_PER_SCALE * p
    if not 0 <= cut <= n_layers:
        raise ValueError(f"boundary p={p} out of range for {n_layers} style layers")
    out = content.clone()
    out[..., cut:, :] = reference[..., cut:, :]
    return out


@dataclass
class EditDirection:
    name: str
    vector: torch.Tensor  # (d_w,) single-W or (L, d_w) per-layer
    layer_mask: tuple[int, ...] | None = None  # None = all layers
    range: tuple[float, float] = (-3.0, 3.0)


def apply_direction(code: torch.Tensor, direction: EditDirection, magnitude: float) -> torch.Tensor:
    """code + magnitude * direction on the masked layers; linear in magnitude."""
    lo, hi = direction.range
    if not lo <= magnitude <= hi:
        raise ValueError(f"magnitude {magnitude} outside [{lo}, {hi}] for direction {direction.name!r}")
    vec = direction.vector
    out = code.clone()
    layers = range(code.shape[-2]) if direction.layer_mask is None else direction.layer_mask
    for j in layers:
        row = vec if vec.dim() == 1 else vec[j]
        out[..., j, :] = out[..., j, :] + magnitude * row
    return out


def find_direction(labeled_codes: list[tuple[torch.Tensor, int]], name: str = "direction",
                   steps: int = 300, lr: float = 0.05, weight_decay: float = 1e-3) -> EditDirection:
    """Unit normal of a linear separator fit to the labeled codes.

    A logistic separator starting from zero weights: deterministic, exactly
    antisymmetric under a label flip, and margin-seeking on separable data.
    Codes may be W vectors or W+ codes; the returned vector matches their shape.
    """
    pos = [c for c, y in labeled_codes if y > 0]
    neg = [c for c, y in labeled_codes if y <= 0]
    if len(pos) < 2 or len(neg) < 2:
        raise ValueError("need at least 2 examples per class")
    shape = pos[0].shape
    x = torch.stack([c.reshape(-1) for c in pos] + [c.reshape(-1) for c in neg]).double()
    y = torch.tensor([1.0] * len(pos) + [-1.0] * len(neg), dtype=torch.float64)
    w = torch.zeros(x.shape[1], dtype=torch.float64, requires_grad=True)
    b = torch.zeros((), dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([w, b], lr=lr)
    for _ in range(steps):
        loss = F.softplus(-y * (x @ w + b)).mean() + weight_decay * w.pow(2).sum()
        opt.zero_grad()
        loss.backward()
        opt.step()
    direction = (w / w.detach().norm().clamp(min=1e-12)).detach()
    return EditDirection(name, direction.reshape(shape).float())


def save_direction(path, direction: EditDirection) -> None:
    from .checkpoint import save_checkpoint

    cfg = {"name": direction.name, "range": list(direction.range),
           "layer_mask": list(direction.layer_mask) if direction.layer_mask is not None else None}
    save_checkpoint(path, "direction", cfg, {"vector": direction.vector.numpy()})


def load_direction(path) -> EditDirection:
    from .checkpoint import load_checkpoint

    meta, arrays = load_checkpoint(path, expect_kind="direction")
    c = meta["config"]
    mask = tuple(c["layer_mask"]) if c.get("layer_mask") is not None else None
    return EditDirection(c["name"], torch.from_numpy(arrays["vector"]), mask, tuple(c["range"]))


# --- style bank -------------------------------------------------------------


@dataclass
class StyleBankEntry:
    id: str
    code: torch.Tensor
    thumbnail_png: bytes
    metadata: str = ""


class StyleBank:
    """Directory-backed store: index.json lists ids; one .npz + .png per entry.
    Reads are lock-free; mutations are serialized."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        if not self.index_path.exists():
            self._write_index([])

    @property
    def index_path(self) -> Path:
        return self.root / "index.json"

    def _write_index(self, ids: list[str]) -> None:
        self.index_path.write_text(json.dumps({"ids": ids}, indent=2))

    def ids(self) -> list[str]:
        return json.loads(self.index_path.read_text())["ids"]

    def add(self, entry: StyleBankEntry) -> None:
        with self._lock:
            np.savez(self.root / f"{entry.id}.npz", code=entry.code.numpy(),
                     metadata=np.frombuffer(entry.metadata.encode(), dtype=np.uint8))
            (self.root / f"{entry.id}.png").write_bytes(entry.thumbnail_png)
            ids = self.ids()
            if entry.id not in ids:
                self._write_index(ids + [entry.id])

    def get(self, entry_id: str) -> StyleBankEntry:
        path = self.root / f"{entry_id}.npz"
        if entry_id not in self.ids() or not path.exists():
            raise KeyError(entry_id)
        with np.load(path) as data:
            code = torch.from_numpy(data["code"])
            metadata = bytes(data["metadata"]).decode() if "metadata" in data else ""
        return StyleBankEntry(entry_id, code, (self.root / f"{entry_id}.png").read_bytes(), metadata)

    def delete(self, entry_id: str) -> None:
        with self._lock:
            ids = self.ids()
            if entry_id not in ids:
                raise KeyError(entry_id)
            self._write_index([i for i in ids if i != entry_id])
            for suffix in (".npz", ".png"):
                path = self.root / f"{entry_id}{suffix}"
                if path.exists():
                    path.unlink()


def curate_styles(cari_stack: SynthesisStack, n_samples: int, psi: float = 0.7,
                  bank: StyleBank | None = None, seed: int = 0) -> list[StyleBankEntry]:
    """Sample candidate styles from the caricature stack (truncated at psi),
    render thumbnails, and persist them; curation then happens by deletion."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    gen = torch.Generator().manual_seed(seed)
    codes = sample_codes(cari_stack, n_samples, generator=gen, psi=psi)
    noise = zero_noise(cari_stack.n_scales)
    entries = []
    with torch.no_grad():
        for i in range(n_samples):
            code = codes[i]
            img, _ = cari_stack.synthesize(code, noise)
            digest = hashlib.sha256(code.numpy().tobytes()).hexdigest()[:12]
            entry = StyleBankEntry(f"style-{digest}", code, encode_png(img), f"psi={psi} seed={seed} sample={i}")
            if bank is not None:
                bank.add(entry)
            entries.append(entry)
    return entries
