"""Training objectives: adversarial (feature + image, non-saturating logistic
with R1), feature-map and identity cycle consistency, attribute matching, and
their weighted combination. All reductions are batch means; fcyc sums over
scales per the training recipe.

Also home to the two discriminator families: an image discriminator and a
feature discriminator that scores the per-scale modulated coarse maps through
per-scale adapters feeding a shared trunk.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import autograd, nn

from .config import LossWeights
from .exaggeration import ExaggerationBlockSet


def _require_batch(t: torch.Tensor, name: str) -> torch.Tensor:
    if t.numel() == 0:
        raise ValueError(f"{name}: empty batch")
    return t


def nonsat_logistic_g(d_fake: torch.Tensor) -> torch.Tensor:
    """Generator side: mean softplus(-D(fake))."""
    return F.softplus(-_require_batch(d_fake, "d_fake")).mean()


def nonsat_logistic_d(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Discriminator side: mean softplus(-D(real)) + mean softplus(D(fake))."""
    return F.softplus(-_require_batch(d_real, "d_real")).mean() + F.softplus(_require_batch(d_fake, "d_fake")).mean()


def r1_penalty(disc, real, gamma: float) -> torch.Tensor:
    """(gamma / 2) * E[ ||grad_x D(x)||^2 ] over a batch of real samples.

    `real` is a tensor or a list of tensors (the feature discriminator scores
    several maps at once); each must require grad.
    """
    inputs = list(real) if isinstance(real, (list, tuple)) else [real]
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("r1_penalty requires real inputs with requires_grad=True")
    scores = disc(real) if not isinstance(real, (list, tuple)) else disc(inputs)
    grads = autograd.grad(scores.sum(), inputs, create_graph=True)
    sq = sum(g.flatten(1).pow(2).sum(dim=1) for g in grads)
    return 0.5 * gamma * sq.mean()


def adv_total(l_feat: torch.Tensor, l_gan: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return l_feat + weights.gan * l_gan


def fcyc_loss(s_pc: ExaggerationBlockSet, s_cp: ExaggerationBlockSet,
              photo_feats: list[torch.Tensor], cari_feats: list[torch.Tensor]) -> torch.Tensor:
    """Per-scale cycle consistency on coarse feature maps.

    Sums, over the coarse scales, the batch-mean L2 norm of the cycle residual
    for both the photo-start (de-exaggerate after exaggerating) and the
    caricature-start direction.
    """
    if len(photo_feats) != len(s_pc) or len(cari_feats) != len(s_cp):
        raise ValueError(
            f"expected {len(s_pc)} feature maps per direction, got {len(photo_feats)} photo / {len(cari_feats)} caricature"
        )
    total = None
    for i, (fp, fc) in enumerate(zip(photo_feats, cari_feats), start=1):
        photo_term = _map_norm(s_cp.apply(i, s_pc.apply(i, fp)) - fp)
        cari_term = _map_norm(s_pc.apply(i, s_cp.apply(i, fc)) - fc)
        term = photo_term + cari_term
        total = term if total is None else total + term
    return total


_NORM_EPS = 1e-8


def _map_norm(diff: torch.Tensor) -> torch.Tensor:
    # sqrt(s + eps^2) - eps equals the L2 norm to ~1e-8 absolute and is exactly
    # zero (with a finite gradient) for a zero residual, where the plain sqrt's
    # backward would be infinite at the identity initialization
    sumsq = diff.flatten(1).pow(2).sum(dim=1)
    return (torch.sqrt(sumsq + _NORM_EPS**2) - _NORM_EPS).mean()


def icyc_loss(embedder, source: torch.Tensor, reconstruction: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between face embeddings of source and cycle-reconstructed
    photos, batch-averaged. Computed only for the photo-start cycle."""
    if embedder is None:
        raise ValueError("identity cycle loss requires an embedder; none configured")
    e_src = embedder(_require_batch(source, "source"))
    e_rec = embedder(_require_batch(reconstruction, "reconstruction"))
    return (e_src - e_rec).pow(2).sum(dim=1).mean()


def cyc_total(l_fcyc: torch.Tensor, l_icyc: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return l_fcyc + weights.icyc * l_icyc


def attr_loss(phi_src: torch.Tensor, phi_dst: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Binary cross entropy between source and target attribute probabilities,
    averaged over attributes (and batch); target probabilities are clamped away
    from {0, 1} before the logs."""
    for name, t in (("phi_src", phi_src), ("phi_dst", phi_dst)):
        _require_batch(t, name)
        if t.min() < 0 or t.max() > 1:
            raise ValueError(f"{name}: probabilities must lie in [0, 1]")
    if phi_src.shape != phi_dst.shape:
        raise ValueError(f"attribute shapes differ: {tuple(phi_src.shape)} vs {tuple(phi_dst.shape)}")
    dst = phi_dst.clamp(eps, 1 - eps)
    return -(phi_src * dst.log() + (1 - phi_src) * (1 - dst).log()).mean()


def total_objective(l_adv: torch.Tensor, l_cyc: torch.Tensor, l_attr: torch.Tensor,
                    weights: LossWeights) -> torch.Tensor:
    return weights.adv * l_adv + weights.cyc * l_cyc + weights.attr * l_attr


# --- discriminators --------------------------------------------------------


class ImageDiscriminator(nn.Module):
    """Plain strided conv net scoring full images; scalar output per sample."""

    kind = "image"

    def __init__(self, resolution: int, base: int = 32, max_ch: int = 128):
        super().__init__()
        layers = [nn.Conv2d(3, base, 3, padding=1), nn.LeakyReLU(0.2)]
        ch = base
        size = resolution
        while size > 4:
            nxt = min(ch * 2, max_ch)
            layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch = nxt
            size //= 2
        self.net = nn.Sequential(*layers)
        self.head = nn.Linear(ch * 16, 1)
        self.resolution = resolution

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.resolution:
            raise ValueError(f"expected {self.resolution}x{self.resolution} images, got {tuple(x.shape)}")
        return self.head(self.net(x).flatten(1)).squeeze(1)


class FeatureDiscriminator(nn.Module):
    """Scores the list of coarse feature maps: per-scale 1x1 adapters pool into
    a shared trunk; the per-scale scalar outputs are summed."""

    kind = "feature"

    def __init__(self, channel_schedule: list[int], width: int = 64):
        super().__init__()
        self.channel_schedule = list(channel_schedule)
        self.adapters = nn.ModuleList(nn.Conv2d(c, width, 1) for c in channel_schedule)
        self.trunk = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, width, 3, padding=1), nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(width * 16, 1)

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        if len(feats) != len(self.adapters):
            raise ValueError(f"expected {len(self.adapters)} feature maps, got {len(feats)}")
        score = None
        for f, adapter, ch in zip(feats, self.adapters, self.channel_schedule):
            if f.shape[1] != ch:
                raise ValueError(f"feature map has {f.shape[1]} channels, expected {ch}")
            x = F.adaptive_avg_pool2d(F.leaky_relu(adapter(f), 0.2), 4)
            s = self.head(self.trunk(x).flatten(1)).squeeze(1)
            score = s if score is None else score + s
        return score
