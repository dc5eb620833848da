"""Synthetic two-domain face-like dataset for desk-scale runs.

Each sample is a rasterized cartoon face whose geometry comes from a latent
parameter vector. The photo domain renders the geometry with smooth shading
and sensor-like noise; the caricature domain exaggerates the geometry's
deviation from the mean and renders flat, outlined, posterized colors. The
ground-truth attribute bits are thresholded geometry parameters, so they are
shared between the domains and learnable from pixels alone. Identity is the
parameter vector; re-rendering the same identity applies pose/illumination
jitter only.
"""

from __future__ import annotations

import numpy as np
import torch

from .config import DataConfig

N_GEOMETRY = 8
N_COLOR = 2
N_PARAMS = N_GEOMETRY + N_COLOR

# (base, amplitude) per geometry channel; values stay inside base +- amplitude
_GEOM_TABLE = np.array([
    (0.58, 0.16),   # 0 face width
    (0.72, 0.10),   # 1 face height
    (0.095, 0.075),  # 2 eye size
    (0.28, 0.10),   # 3 eye separation
    (-0.18, 0.07),  # 4 eye height
    (0.30, 0.14),   # 5 mouth width
    (0.09, 0.065),  # 6 mouth height
    (0.075, 0.055),  # 7 nose size
])

# attribute k is a threshold on one geometry channel; pairs are mutually exclusive.
# identities are sampled with a margin band around the threshold (annotations
# exist only for clear cases), keeping labels visually separable at 32x32
_ATTR_CHANNELS = [0, 0, 2, 2, 3, 3, 5, 5, 6, 6, 7, 7]
_ATTR_SIGNS = [1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1]
_ATTR_THRESHOLD = 0.43
_ATTR_MARGIN = 0.35
ATTRIBUTE_NAMES = [
    "wide_face", "narrow_face", "big_eyes", "small_eyes", "far_eyes", "close_eyes",
    "wide_mouth", "narrow_mouth", "tall_mouth", "flat_mouth", "big_nose", "small_nose",
]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed,) + key)))


def sample_identity(seed: int, index: int) -> np.ndarray:
    """Latent parameter vector of one identity (geometry + color channels)."""
    r = _rng(seed, 0, index)
    eps = np.clip(r.standard_normal(N_PARAMS), -2.0, 2.0)
    for c in sorted(set(_ATTR_CHANNELS)):
        while abs(abs(eps[c]) - _ATTR_THRESHOLD) < _ATTR_MARGIN:
            eps[c] = np.clip(r.standard_normal(), -2.0, 2.0)
    return eps


def attribute_bits(eps: np.ndarray, n_attributes: int) -> np.ndarray:
    reps = -(-n_attributes // len(_ATTR_CHANNELS))
    chans = (_ATTR_CHANNELS * reps)[:n_attributes]
    signs = (_ATTR_SIGNS * reps)[:n_attributes]
    return np.array([1 if s * eps[c] > _ATTR_THRESHOLD else 0 for c, s in zip(chans, signs)], dtype=np.int64)


def _geometry(eps: np.ndarray, exaggeration: float) -> np.ndarray:
    v = np.tanh(exaggeration * eps[:N_GEOMETRY] / 1.5)
    return _GEOM_TABLE[:, 0] + _GEOM_TABLE[:, 1] * v


def render_face(eps: np.ndarray, domain: str, size: int = 32, exaggeration: float = 2.2,
                jitter: np.ndarray | None = None, noise_rng: np.random.Generator | None = None,
                supersample: int = 4) -> np.ndarray:
    """Rasterize one face as float32 CHW in [-1, 1]."""
    if domain == "photo":
        geo = _geometry(eps, 1.0)
    elif domain == "caricature":
        geo = _geometry(eps, exaggeration)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    face_rx, face_ry, eye_r, eye_dx, eye_y, mouth_w, mouth_h, nose_r = geo
    dx, dy, phase = (jitter if jitter is not None else np.zeros(3))

    s = size * supersample
    ax = np.linspace(-1, 1, s, dtype=np.float32)
    xx, yy = np.meshgrid(ax - dx, ax - dy)

    def ellipse(cx, cy, rx, ry):
        return ((xx - cx) / max(rx, 1e-3)) ** 2 + ((yy - cy) / max(ry, 1e-3)) ** 2

    skin = np.array([0.87, 0.70, 0.58]) + 0.06 * eps[N_GEOMETRY]
    bg = np.array([0.22, 0.28, 0.38]) + 0.05 * eps[N_GEOMETRY + 1]
    img = np.ones((s, s, 3), dtype=np.float32) * bg.astype(np.float32)

    face_q = ellipse(0.0, 0.04, face_rx, face_ry)
    img[face_q <= 1] = skin
    if domain == "caricature":
        img[(face_q > 1) & (face_q <= 1.24)] = (0.08, 0.06, 0.06)

    for sx in (-1, 1):
        eye_q = ellipse(sx * eye_dx, eye_y, eye_r, eye_r * 0.75)
        img[(eye_q > 1) & (eye_q <= 1.6)] = (0.10, 0.08, 0.08)
        img[eye_q <= 1] = (0.96, 0.96, 0.97)
        img[ellipse(sx * eye_dx, eye_y, eye_r * 0.45, eye_r * 0.45) <= 1] = (0.09, 0.08, 0.10)
    img[ellipse(0.0, 0.08, nose_r, nose_r * 1.5) <= 1] = np.clip(skin * 0.62, 0, 1)
    mouth_q = ellipse(0.0, 0.42, mouth_w, mouth_h)
    img[mouth_q <= 1] = (0.62, 0.15, 0.18)
    if domain == "caricature":
        img[(mouth_q > 1) & (mouth_q <= 1.5)] = (0.08, 0.06, 0.06)

    if domain == "photo":
        # smooth illumination falloff plus mild sensor noise
        light = 1.0 - 0.18 * (yy + 0.35 * np.sin(phase) * xx + 1) / 2
        img *= light[..., None]
        if noise_rng is not None:
            img += noise_rng.normal(0.0, 0.015, img.shape).astype(np.float32)
    else:
        img = np.round(img * 5) / 5  # posterized flat shading

    img = img.reshape(size, supersample, size, supersample, 3).mean(axis=(1, 3))
    return (np.clip(img, 0, 1).transpose(2, 0, 1) * 2 - 1).astype(np.float32)


class SyntheticFaces(torch.utils.data.Dataset):
    """n distinct identities, one render each: (image, attribute bits)."""

    def __init__(self, domain: str, n: int, cfg: DataConfig | None = None, seed: int | None = None,
                 size: int = 32):
        self.cfg = cfg or DataConfig()
        self.domain = domain
        self.n = n
        self.seed = self.cfg.seed if seed is None else seed
        self.size = size

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, idx: int):
        eps = sample_identity(self.seed, idx)
        r = _rng(self.seed, 1, idx)
        jit = np.array([*r.uniform(-0.03, 0.03, 2) * self.cfg.jitter, r.uniform(0, np.pi)])
        img = render_face(eps, self.domain, self.size, self.cfg.exaggeration, jit, r)
        bits = attribute_bits(eps, self.cfg.n_attributes)
        return torch.from_numpy(img), torch.from_numpy(bits)


class IdentityFaces(torch.utils.data.Dataset):
    """n_identities x per_identity renders: (image, attribute bits, identity index)."""

    def __init__(self, domain: str, n_identities: int, per_identity: int,
                 cfg: DataConfig | None = None, seed: int | None = None, size: int = 32):
        self.cfg = cfg or DataConfig()
        self.domain = domain
        self.n_identities = n_identities
        self.per_identity = per_identity
        self.seed = self.cfg.seed if seed is None else seed
        self.size = size

    def __len__(self) -> int:
        return self.n_identities * self.per_identity

    def __getitem__(self, idx: int):
        ident, render = divmod(idx, self.per_identity)
        eps = sample_identity(self.seed, ident)
        r = _rng(self.seed, 2, ident, render)
        jit = np.array([*r.uniform(-0.03, 0.03, 2) * self.cfg.jitter, r.uniform(0, np.pi)])
        img = render_face(eps, self.domain, self.size, self.cfg.exaggeration, jit, r)
        bits = attribute_bits(eps, self.cfg.n_attributes)
        return torch.from_numpy(img), torch.from_numpy(bits), ident


def stack_images(dataset, indices=None) -> torch.Tensor:
    indices = range(len(dataset)) if indices is None else indices
    return torch.stack([dataset[i][0] for i in indices])
