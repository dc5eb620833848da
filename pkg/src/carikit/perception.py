"""Attribute classifiers and the face-identity embedder.

Both share a small residual convolutional trunk. Classifiers emit a sigmoid
probability per attribute over a label space shared between the photo and
caricature domains; the embedder emits L2-normalized identity vectors and is
trained with a triplet margin objective on the synthetic identity dataset.
The trunk's pooled features double as the desk-scale Fréchet extractor.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import arrays_to_state_dict, load_checkpoint, save_checkpoint, state_dict_to_arrays
from .config import PerceptionConfig


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, down: bool = True):
        super().__init__()
        self.down = down
        self.conv1 = nn.Conv2d(in_ch, in_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        y = self.conv2(F.leaky_relu(self.conv1(F.leaky_relu(x, 0.2)), 0.2))
        y = (y + self.skip(x)) * 0.7071
        return F.avg_pool2d(y, 2) if self.down else y


class ConvTrunk(nn.Module):
    """Residual trunk: one full-resolution stage (small facial features live in
    very few pixels), downsampling stages to 4x4, then a flat projection; faces
    are centered, so spatial layout is signal, not nuisance."""

    def __init__(self, resolution: int, width: int = 32, max_ch: int = 128, feat_dim: int = 128):
        super().__init__()
        self.resolution = resolution
        self.stem = nn.Conv2d(3, width, 3, padding=1)
        stages = [ResBlock(width, width, down=False)]
        ch = width
        size = resolution
        while size > 4:
            nxt = min(ch * 2, max_ch)
            stages.append(ResBlock(ch, nxt))
            ch = nxt
            size //= 2
        self.stages = nn.Sequential(*stages)
        self.proj = nn.Linear(ch * 16, feat_dim)
        self.out_dim = feat_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ValueError(f"expected {self.resolution}x{self.resolution} input, got {tuple(x.shape)}")
        x = self.stages(self.stem(x))
        return F.leaky_relu(self.proj(x.flatten(1)), 0.2)


class AttributeClassifier(nn.Module):
    def __init__(self, domain_tag: str, resolution: int, n_attributes: int, width: int = 32):
        super().__init__()
        self.domain_tag = domain_tag
        self.n_attributes = n_attributes
        self.trunk = ConvTrunk(resolution, width)
        self.head = nn.Linear(self.trunk.out_dim, n_attributes)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(img))

    def features(self, img: torch.Tensor) -> torch.Tensor:
        return self.trunk(img)


def classify(clf: AttributeClassifier, img: torch.Tensor) -> torch.Tensor:
    """Sigmoid attribute probabilities; deterministic in eval mode."""
    clf.eval()
    with torch.no_grad():
        return torch.sigmoid(clf(img))


class IdentityEmbedder(nn.Module):
    def __init__(self, resolution: int, embed_dim: int = 32, width: int = 32):
        super().__init__()
        self.embed_dim = embed_dim
        self.trunk = ConvTrunk(resolution, width)
        self.head = nn.Linear(self.trunk.out_dim, embed_dim)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.head(self.trunk(img)), dim=-1)


def embed(embedder: IdentityEmbedder, img: torch.Tensor) -> torch.Tensor:
    embedder.eval()
    with torch.no_grad():
        return embedder(img)


def attribute_match_accuracy(a: torch.Tensor, b: torch.Tensor, threshold: float = 0.5) -> float:
    """Binarize both attribute vectors and return (#matching positions) / K."""
    if a.shape != b.shape:
        raise ValueError(f"attribute shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a >= threshold) == (b >= threshold)).float().mean().item()


# --- training --------------------------------------------------------------


def _batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train_classifier(dataset, domain: str, cfg: PerceptionConfig, heldout=None,
                     resolution: int = 32) -> tuple[AttributeClassifier, float]:
    """BCE-train an attribute classifier; returns (classifier, held-out accuracy).

    Held-out accuracy is the mean per-attribute binary accuracy at threshold 0.5
    (1.0 when heldout is None and epochs is 0 leaves weights at init).
    """
    sample_bits = dataset[0][1]
    if len(sample_bits) != cfg.n_attributes:
        raise ValueError(f"dataset labels have K={len(sample_bits)}, config expects {cfg.n_attributes}")
    torch.manual_seed(cfg.seed)
    clf = AttributeClassifier(domain, resolution, cfg.n_attributes, cfg.width)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.lr)
    images = torch.stack([dataset[i][0] for i in range(len(dataset))])
    labels = torch.stack([dataset[i][1] for i in range(len(dataset))]).float()
    clf.train()
    for _ in range(cfg.epochs):
        for idx in _batches(len(dataset), cfg.batch_size, gen):
            opt.zero_grad()
            loss = F.binary_cross_entropy_with_logits(clf(images[idx]), labels[idx])
            loss.backward()
            opt.step()
    clf.eval()
    acc = 1.0 if heldout is None else classifier_accuracy(clf, heldout)
    return clf, acc


def classifier_accuracy(clf: AttributeClassifier, dataset, batch: int = 128) -> float:
    hits, total = 0, 0
    with torch.no_grad():
        for i in range(0, len(dataset), batch):
            imgs = torch.stack([dataset[j][0] for j in range(i, min(i + batch, len(dataset)))])
            bits = torch.stack([dataset[j][1] for j in range(i, min(i + batch, len(dataset)))])
            pred = (torch.sigmoid(clf(imgs)) >= 0.5).long()
            hits += (pred == bits).sum().item()
            total += bits.numel()
    return hits / total


def train_embedder(dataset, cfg: PerceptionConfig, resolution: int = 32,
                   margin: float = 0.5) -> IdentityEmbedder:
    """Triplet-train the identity embedder on an IdentityFaces-style dataset."""
    torch.manual_seed(cfg.seed)
    emb = IdentityEmbedder(resolution, cfg.embed_dim, cfg.width)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(emb.parameters(), lr=cfg.lr)
    images = torch.stack([dataset[i][0] for i in range(len(dataset))])
    idents = torch.tensor([dataset[i][2] for i in range(len(dataset))])
    by_ident: dict[int, list[int]] = {}
    for i, ident in enumerate(idents.tolist()):
        by_ident.setdefault(ident, []).append(i)
    ident_ids = [k for k, v in by_ident.items() if len(v) >= 2]
    if len(ident_ids) < 2:
        raise ValueError("embedder training needs >= 2 identities with >= 2 renders each")
    emb.train()
    for _ in range(cfg.epochs):
        for _ in range(max(1, len(dataset) // cfg.batch_size)):
            anchors, positives, negatives = [], [], []
            for _ in range(cfg.batch_size):
                ia, ineg = torch.randint(0, len(ident_ids), (2,), generator=gen).tolist()
                if ineg == ia:
                    ineg = (ia + 1) % len(ident_ids)
                group = by_ident[ident_ids[ia]]
                pick = torch.randint(0, len(group), (2,), generator=gen).tolist()
                if pick[0] == pick[1]:
                    pick[1] = (pick[1] + 1) % len(group)
                other = by_ident[ident_ids[ineg]]
                anchors.append(group[pick[0]])
                positives.append(group[pick[1]])
                negatives.append(other[torch.randint(0, len(other), (1,), generator=gen).item()])
            ea = emb(images[anchors])
            ep = emb(images[positives])
            en = emb(images[negatives])
            loss = F.triplet_margin_loss(ea, ep, en, margin=margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
    emb.eval()
    return emb


def filter_shared_labels(bits_by_identity: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Per identity, keep only labels set in at least 50% of that identity's records."""
    out = {}
    for ident, bits in bits_by_identity.items():
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ValueError("expected one (n_records, K) array per identity")
        out[ident] = (arr.mean(axis=0) >= 0.5).astype(np.int64)
    return out


# --- label file schema: one line per image, "<image_id> <bitstring>" --------


def write_labels(path, ids: list[str], bits: np.ndarray) -> None:
    bits = np.asarray(bits)
    if len(ids) != len(bits):
        raise ValueError("ids and label rows differ in length")
    with open(path, "w") as fh:
        for image_id, row in zip(ids, bits):
            fh.write(f"{image_id} {''.join(str(int(b)) for b in row)}\n")


def read_labels(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or set(parts[1]) - {"0", "1"}:
                raise ValueError(f"{path}:{ln}: expected '<image_id> <bitstring>'")
            ids.append(parts[0])
            rows.append([int(c) for c in parts[1]])
    if rows and any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: inconsistent label width")
    return ids, np.asarray(rows, dtype=np.int64)


# --- persistence ------------------------------------------------------------


def save_classifier(path, clf: AttributeClassifier) -> None:
    cfg = {"domain_tag": clf.domain_tag, "resolution": clf.trunk.resolution,
           "n_attributes": clf.n_attributes, "width": clf.trunk.stem.out_channels}
    save_checkpoint(path, "classifier", cfg, state_dict_to_arrays(clf.state_dict()))


def load_classifier(path) -> AttributeClassifier:
    meta, arrays = load_checkpoint(path, expect_kind="classifier")
    c = meta["config"]
    clf = AttributeClassifier(c["domain_tag"], c["resolution"], c["n_attributes"], c["width"])
    clf.load_state_dict(arrays_to_state_dict(arrays))
    clf.eval()
    return clf


def save_embedder(path, emb: IdentityEmbedder) -> None:
    cfg = {"resolution": emb.trunk.resolution, "embed_dim": emb.embed_dim,
           "width": emb.trunk.stem.out_channels}
    save_checkpoint(path, "embedder", cfg, state_dict_to_arrays(emb.state_dict()))


def load_embedder(path) -> IdentityEmbedder:
    meta, arrays = load_checkpoint(path, expect_kind="embedder")
    c = meta["config"]
    emb = IdentityEmbedder(c["resolution"], c["embed_dim"], c["width"])
    emb.load_state_dict(arrays_to_state_dict(arrays))
    emb.eval()
    return emb
