"""Photo-to-latent embedding.

Stage 1 optimizes a single W vector (initialized at the stack's mean style and
broadcast to every layer) against a pixel + pyramid reconstruction loss.
Stage 2 optimizes the full per-layer code and the noise bank jointly, with a
ramped-down random perturbation of the code and a multi-scale autocorrelation
penalty that keeps the noise free of image signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .config import InversionConfig
from .synthesis import SynthesisStack, broadcast_w, freeze, zero_noise


@dataclass
class Stage1Result:
    w: torch.Tensor
    trace: list[dict]
    final_loss: float
    noise: list[torch.Tensor] = field(default_factory=list)


@dataclass
class InversionResult:
    code: torch.Tensor
    noise: list[torch.Tensor]
    reconstruction: torch.Tensor
    trace: list[dict]
    stage1_loss: float
    final_loss: float


def reconstruction_loss(image: torch.Tensor, target: torch.Tensor, pyramid_levels: int = 0) -> torch.Tensor:
    """Pixel MSE plus MSE on `pyramid_levels` average-pooled octaves."""
    loss = F.mse_loss(image, target)
    a, b = image, target
    for _ in range(pyramid_levels):
        if a.shape[-1] < 8:
            break
        a = F.avg_pool2d(a, 2)
        b = F.avg_pool2d(b, 2)
        loss = loss + F.mse_loss(a, b)
    return loss


def noise_regularizer(noise: list[torch.Tensor]) -> torch.Tensor:
    """Multi-scale autocorrelation penalty; ~0 for i.i.d. noise, positive when
    the maps carry spatial structure."""
    reg = torch.zeros((), dtype=noise[0].dtype if noise else torch.float32)
    for n in noise:
        while n.shape[-1] >= 8:
            reg = reg + n.mul(torch.roll(n, 1, dims=2)).mean().pow(2)
            reg = reg + n.mul(torch.roll(n, 1, dims=3)).mean().pow(2)
            n = F.avg_pool2d(n, 2) * 2
    return reg


def _as_batched(target: torch.Tensor, stack: SynthesisStack) -> torch.Tensor:
    if target.dim() == 3:
        target = target.unsqueeze(0)
    if target.shape[-1] != stack.resolution or target.shape[-2] != stack.resolution:
        raise ValueError(f"target resolution {tuple(target.shape[-2:])} != stack resolution {stack.resolution}")
    return target


def invert_stage1(stack: SynthesisStack, target: torch.Tensor, cfg: InversionConfig,
                  noise: list[torch.Tensor] | None = None) -> Stage1Result:
    """Optimize a single broadcast W vector from the mean style."""
    freeze(stack).eval()
    target = _as_batched(target, stack)
    bank = [n.detach().clone() for n in noise] if noise is not None else zero_noise(stack.n_scales)
    w = stack.mean_w.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=cfg.stage1_lr)
    trace = []
    for step in range(cfg.stage1_steps):
        img, _ = stack.synthesize(broadcast_w(w, stack.n_style_layers), bank)
        loss = reconstruction_loss(img, target, cfg.pyramid_levels)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append({"stage": 1, "step": step, "loss": float(loss.detach())})
    with torch.no_grad():
        img, _ = stack.synthesize(broadcast_w(w, stack.n_style_layers), bank)
        final = float(reconstruction_loss(img, target, cfg.pyramid_levels))
    return Stage1Result(w.detach(), trace, final, bank)


def invert_stage2(stack: SynthesisStack, target: torch.Tensor, w0: torch.Tensor,
                  cfg: InversionConfig, noise: list[torch.Tensor] | None = None,
                  generator: torch.Generator | None = None,
                  stage1_loss: float | None = None) -> InversionResult:
    """Joint W+/noise refinement initialized from the stage-1 vector."""
    freeze(stack).eval()
    target = _as_batched(target, stack)
    gen = generator or torch.Generator().manual_seed(cfg.seed)
    code = broadcast_w(w0.detach(), stack.n_style_layers).clone().requires_grad_(True)
    bank_init = [n.detach().clone() for n in noise] if noise is not None else zero_noise(stack.n_scales)
    bank = [n.requires_grad_(True) for n in bank_init]
    opt = torch.optim.Adam([code] + bank, lr=cfg.stage2_lr)
    a0 = cfg.perturb_factor * float(stack.w_std)
    steps = cfg.stage2_steps
    trace = []
    for step in range(steps):
        amp = a0 * (1 - step / steps) ** 2
        code_in = code + amp * torch.randn(code.shape, generator=gen) if amp > 0 else code
        img, _ = stack.synthesize(code_in, bank)
        recon = reconstruction_loss(img, target, cfg.pyramid_levels)
        reg = cfg.noise_weight * noise_regularizer(bank) if cfg.noise_weight > 0 else torch.zeros(())
        loss = recon + reg
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append({"stage": 2, "step": step, "loss": float(recon.detach()),
                      "reg": float(reg.detach()), "total": float(loss.detach())})
    with torch.no_grad():
        reconstruction, _ = stack.synthesize(code, bank)
        final = float(reconstruction_loss(reconstruction, target, cfg.pyramid_levels))
    return InversionResult(
        code=code.detach(), noise=[n.detach() for n in bank], reconstruction=reconstruction.squeeze(0),
        trace=trace, stage1_loss=stage1_loss if stage1_loss is not None else float("nan"), final_loss=final,
    )


def invert(stack: SynthesisStack, target: torch.Tensor, cfg: InversionConfig) -> InversionResult:
    """Full two-stage embedding; deterministic under the config seed."""
    stage1 = invert_stage1(stack, target, cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    result = invert_stage2(stack, target, stage1.w, cfg, noise=stage1.noise, generator=gen,
                           stage1_loss=stage1.final_loss)
    result.trace = stage1.trace + result.trace
    return result


# --- persistence ------------------------------------------------------------


def save_inversion(path, result: InversionResult, source_key: str = "") -> None:
    import json

    from .checkpoint import save_checkpoint

    arrays = {"code": result.code.numpy(), "reconstruction": result.reconstruction.numpy()}
    for i, n in enumerate(result.noise):
        arrays[f"noise.{i}"] = n.numpy()
    cfg = {"source_key": source_key, "stage1_loss": result.stage1_loss,
           "final_loss": result.final_loss, "trace": json.dumps(result.trace)}
    save_checkpoint(path, "inversion", cfg, arrays)


def load_inversion(path) -> InversionResult:
    import json

    from .checkpoint import load_checkpoint

    meta, arrays = load_checkpoint(path, expect_kind="inversion")
    n_noise = sum(1 for k in arrays if k.startswith("noise."))
    noise = [torch.from_numpy(arrays[f"noise.{i}"]) for i in range(n_noise)]
    return InversionResult(
        code=torch.from_numpy(arrays["code"]),
        noise=noise,
        reconstruction=torch.from_numpy(arrays["reconstruction"]),
        trace=json.loads(meta["config"]["trace"]),
        stage1_loss=meta["config"]["stage1_loss"],
        final_loss=meta["config"]["final_loss"],
    )
