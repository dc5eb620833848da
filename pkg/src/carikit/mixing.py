"""Layer swapping: build a mixed stack from two domain stacks.

The structure-source stack supplies the first `p` (coarse) blocks and the
mapping network; the other stack supplies the remaining `c` fine blocks and
the RGB head. Copied weights are frozen and never updated afterwards.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch

from .synthesis import CARICATURE, MIXED, PHOTO, SynthesisStack, freeze, random_noise


@dataclass(frozen=True)
class MixSpec:
    p: int
    c: int
    structure_domain: str = PHOTO

    def validate(self, n_scales: int) -> None:
        if self.p < 0 or self.c < 0:
            raise ValueError(f"mix counts must be non-negative, got p={self.p}, c={self.c}")
        if self.p + self.c != n_scales:
            raise ValueError(f"p + c must equal n_scales ({n_scales}), got {self.p} + {self.c}")
        if self.structure_domain not in (PHOTO, CARICATURE):
            raise ValueError(f"unknown structure_domain {self.structure_domain!r}")


def _check_compatible(photo: SynthesisStack, cari: SynthesisStack) -> None:
    a, b = photo.cfg, cari.cfg
    if (a.n_scales, a.d_z, a.d_w, a.channels, a.mapping_layers, a.modulation) != (
        b.n_scales, b.d_z, b.d_w, b.channels, b.mapping_layers, b.modulation,
    ):
        raise ValueError("stacks have incompatible architectures and cannot be layer-mixed")


def build_mixed(photo: SynthesisStack, cari: SynthesisStack, spec: MixSpec) -> SynthesisStack:
    """Copy blocks 1..p from the structure-source stack and the rest from the
    other stack. The result is frozen; its mapping network (and W statistics)
    come from the structure source, the RGB head from whichever stack supplied
    the final block."""
    _check_compatible(photo, cari)
    spec.validate(photo.cfg.n_scales)
    structure, style = (photo, cari) if spec.structure_domain == PHOTO else (cari, photo)

    mixed = SynthesisStack(photo.cfg, MIXED)
    mixed.mapping = copy.deepcopy(structure.mapping)
    mixed.mean_w.copy_(structure.mean_w)
    mixed.w_std.copy_(structure.w_std)
    sources = []
    for i in range(photo.cfg.n_scales):
        src = structure if i < spec.p else style
        mixed.blocks[i] = copy.deepcopy(src.blocks[i])
        sources.append(src.domain_tag)
    tail = structure if spec.c == 0 else style
    mixed.to_rgb = copy.deepcopy(tail.to_rgb)
    mixed.block_sources = sources
    mixed.mix = {"p": spec.p, "c": spec.c, "structure_domain": spec.structure_domain}
    mixed.eval()
    return freeze(mixed)


def build_p2c(photo: SynthesisStack, cari: SynthesisStack, p: int) -> SynthesisStack:
    return build_mixed(photo, cari, MixSpec(p=p, c=photo.cfg.n_scales - p, structure_domain=PHOTO))


def build_c2p(photo: SynthesisStack, cari: SynthesisStack, p: int) -> SynthesisStack:
    """Mirror model: coarse layers from the caricature stack, fine from photo."""
    return build_mixed(photo, cari, MixSpec(p=p, c=photo.cfg.n_scales - p, structure_domain=CARICATURE))


def sweep_boundary(photo: SynthesisStack, cari: SynthesisStack, code: torch.Tensor,
                   noise: list[torch.Tensor] | None = None, structure_domain: str = PHOTO) -> list[torch.Tensor]:
    """Render one image per boundary p = n_scales..0 with a fixed code and noise."""
    n = photo.cfg.n_scales
    if noise is None:
        noise = random_noise(n, generator=torch.Generator().manual_seed(0))
    images = []
    with torch.no_grad():
        for p in range(n, -1, -1):
            mixed = build_mixed(photo, cari, MixSpec(p=p, c=n - p, structure_domain=structure_domain))
            img, _ = mixed.synthesize(code, noise)
            images.append(img)
    return images
