"""Desk-scale trainers.

`train_domain_stack` trains (or fine-tunes) one synthesis stack against an
image dataset with the non-saturating logistic loss and lazy R1.
`train_exaggeration` trains both shape-modulation block sets jointly on frozen
stacks, alternating a blocks step with a discriminator step, and emits one
line-delimited JSON loss record per iteration.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from . import losses
from .config import ModelConfig, TrainConfig
from .exaggeration import CariGANModel, build_carigan, cycle_reconstruct
from .losses import FeatureDiscriminator, ImageDiscriminator
from .mixing import build_c2p, build_p2c
from .synthesis import SynthesisStack, broadcast_w, freeze, random_noise, weights_fingerprint


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Batch:
    photo_code: torch.Tensor
    photo_feats: list[torch.Tensor]
    photo_img: torch.Tensor
    photo_noise: list[torch.Tensor]
    cari_code: torch.Tensor
    cari_feats: list[torch.Tensor]
    cari_img: torch.Tensor
    cari_noise: list[torch.Tensor]


@torch.no_grad()
def sample_training_batch(photo: SynthesisStack, cari: SynthesisStack, n: int,
                          generator: torch.Generator | None = None) -> Batch:
    """Draw z ~ N(0, I) through each stack's own mapping net and synthesize
    fresh samples (features + images) for both domains."""
    if n < 1:
        raise ValueError("batch size must be >= 1")
    z_p = torch.randn(n, photo.cfg.d_z, generator=generator)
    z_c = torch.randn(n, cari.cfg.d_z, generator=generator)
    code_p = broadcast_w(photo.map_latent(z_p), photo.n_style_layers)
    code_c = broadcast_w(cari.map_latent(z_c), cari.n_style_layers)
    noise_p = random_noise(photo.n_scales, n, generator)
    noise_c = random_noise(cari.n_scales, n, generator)
    img_p, feats_p = photo.synthesize(code_p, noise_p)
    img_c, feats_c = cari.synthesize(code_c, noise_c)
    return Batch(code_p, feats_p, img_p, noise_p, code_c, feats_c, img_c, noise_c)


class LossLog:
    """Line-delimited JSON loss records, one per iteration."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def read_loss_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def make_exaggeration_setup(photo: SynthesisStack, cari: SynthesisStack, p: int, seed: int = 0,
                            block_init_std: float = 0.0):
    """Reproducibly build the p2c/c2p models and their four discriminators.

    block_init_std > 0 starts the blocks from a small random residual instead
    of the exact identity.
    """
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        p2c = build_carigan(build_p2c(photo, cari, p), "p2c")
        c2p = build_carigan(build_c2p(photo, cari, p), "c2p")
        if block_init_std > 0:
            for model in (p2c, c2p):
                for block in model.blocks.blocks:
                    torch.nn.init.normal_(block.conv2.weight, std=block_init_std)
                    torch.nn.init.zeros_(block.conv2.bias)
        coarse = list(photo.cfg.channels[:p])
        discs = {
            "feat_c": FeatureDiscriminator(coarse),
            "img_c": ImageDiscriminator(photo.resolution),
            "feat_p": FeatureDiscriminator(coarse),
            "img_p": ImageDiscriminator(photo.resolution),
        }
    return p2c, c2p, discs


def train_exaggeration(photo: SynthesisStack, cari: SynthesisStack, p2c: CariGANModel,
                       c2p: CariGANModel, discs: dict, cfg: TrainConfig,
                       clf_photo=None, clf_cari=None, embedder=None,
                       log_path=None, checkpoint_dir=None) -> tuple[CariGANModel, CariGANModel, LossLog]:
    """Train both block sets jointly against frozen stacks.

    Copied stack weights are never registered with an optimizer and are
    asserted bit-unchanged at exit. Training always runs at alpha = 1.
    """
    from .exaggeration import save_carigan

    terms = set(cfg.loss_terms)
    w = cfg.weights
    if "attr" in terms and (clf_photo is None or clf_cari is None):
        raise ValueError("attribute matching enabled but classifiers are not configured")
    if "cyc" in terms and embedder is None:
        raise ValueError("identity cycle loss enabled but no embedder is configured")
    for net in (photo, cari, p2c.stack, c2p.stack):
        freeze(net)
    for net in (clf_photo, clf_cari, embedder):
        if net is not None:
            freeze(net).eval()
    fingerprints = {name: weights_fingerprint(m) for name, m in
                    (("p2c", p2c.stack), ("c2p", c2p.stack))}

    p = p2c.p
    gen = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    for blocks in (p2c.blocks, c2p.blocks):
        blocks.train()
        for prm in blocks.parameters():
            prm.requires_grad_(True)
    g_params = list(p2c.blocks.parameters()) + list(c2p.blocks.parameters())
    d_params = [prm for d in discs.values() for prm in d.parameters()]
    opt_g = torch.optim.Adam(g_params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(d_params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    log = LossLog(log_path)
    zero = torch.zeros(())

    def discriminator_step(pairs, step_index):
        d_loss = zero
        for name, real, fake in pairs:
            d_loss = d_loss + losses.nonsat_logistic_d(discs[name](real), discs[name](fake))
        r1 = zero
        if w.r1_gamma > 0 and step_index % cfg.r1_interval == 0:
            # lazy regularization: scale by the interval to keep the effective
            # penalty strength independent of how often it is applied
            for name, real, _ in pairs:
                if isinstance(real, list):
                    live = [f.clone().requires_grad_(True) for f in real]
                else:
                    live = real.clone().requires_grad_(True)
                r1 = r1 + cfg.r1_interval * losses.r1_penalty(discs[name], live, w.r1_gamma)
        opt_d.zero_grad()
        (d_loss + r1).backward()
        opt_d.step()
        return d_loss, r1

    # discriminator warmup: blocks stay at their initialization (identity for
    # fresh models), so the adversarial game starts in earnest at iteration 1
    for warm in range(1, cfg.d_warmup + 1):
        batch = sample_training_batch(photo, cari, cfg.batch_size, gen)
        noise_pc = random_noise(photo.n_scales, cfg.batch_size, gen)
        noise_cp = random_noise(cari.n_scales, cfg.batch_size, gen)
        with torch.no_grad():
            img_p2c, mf_p2c = p2c.forward_caricature(batch.photo_code, noise_pc, alphas=[1.0] * p)
            img_c2p, mf_c2p = c2p.forward_caricature(batch.cari_code, noise_cp, alphas=[1.0] * p)
        discriminator_step([
            ("feat_c", [f.detach() for f in batch.cari_feats[:p]], [f.detach() for f in mf_p2c]),
            ("img_c", batch.cari_img, img_p2c.detach()),
            ("feat_p", [f.detach() for f in batch.photo_feats[:p]], [f.detach() for f in mf_c2p]),
            ("img_p", batch.photo_img, img_c2p.detach()),
        ], warm)

    for it in range(1, cfg.iterations + 1):
        batch = sample_training_batch(photo, cari, cfg.batch_size, gen)
        noise_pc = random_noise(photo.n_scales, cfg.batch_size, gen)
        noise_cp = random_noise(cari.n_scales, cfg.batch_size, gen)

        # blocks step
        img_p2c, mf_p2c = p2c.forward_caricature(batch.photo_code, noise_pc, alphas=[1.0] * p)
        img_c2p, mf_c2p = c2p.forward_caricature(batch.cari_code, noise_cp, alphas=[1.0] * p)
        l_feat = losses.nonsat_logistic_g(discs["feat_c"](mf_p2c)) + \
            losses.nonsat_logistic_g(discs["feat_p"](mf_c2p))
        l_gan = losses.nonsat_logistic_g(discs["img_c"](img_p2c)) + \
            losses.nonsat_logistic_g(discs["img_p"](img_c2p))
        l_adv = losses.adv_total(l_feat, l_gan, w) if "adv" in terms else zero
        if "cyc" in terms:
            l_fcyc = losses.fcyc_loss(p2c.blocks, c2p.blocks, batch.photo_feats[:p], batch.cari_feats[:p])
            rec = cycle_reconstruct(photo, p2c.blocks, c2p.blocks, batch.photo_code, batch.photo_noise, p)
            l_icyc = losses.icyc_loss(embedder, batch.photo_img, rec)
            l_cyc = losses.cyc_total(l_fcyc, l_icyc, w)
        else:
            l_fcyc = l_icyc = l_cyc = zero
        if "attr" in terms:
            with torch.no_grad():
                src_p = torch.sigmoid(clf_photo(batch.photo_img))
                src_c = torch.sigmoid(clf_cari(batch.cari_img))
            l_attr = losses.attr_loss(src_p, torch.sigmoid(clf_cari(img_p2c))) + \
                losses.attr_loss(src_c, torch.sigmoid(clf_photo(img_c2p)))
        else:
            l_attr = zero
        total = losses.total_objective(l_adv, l_cyc, l_attr, w)
        if not torch.isfinite(total):
            raise TrainingDiverged(f"non-finite objective at iteration {it}")
        opt_g.zero_grad()
        total.backward()
        opt_g.step()

        # discriminator step
        d_loss, r1 = discriminator_step([
            ("feat_c", [f.detach() for f in batch.cari_feats[:p]], [f.detach() for f in mf_p2c]),
            ("img_c", batch.cari_img, img_p2c.detach()),
            ("feat_p", [f.detach() for f in batch.photo_feats[:p]], [f.detach() for f in mf_c2p]),
            ("img_p", batch.photo_img, img_c2p.detach()),
        ], cfg.d_warmup + it)

        if it % cfg.log_every == 0:
            log.write({
                "iteration": it,
                "l_feat": float(l_feat.detach()), "l_gan": float(l_gan.detach()),
                "l_adv": float(l_adv.detach()), "l_fcyc": float(l_fcyc.detach()),
                "l_icyc": float(l_icyc.detach()), "l_cyc": float(l_cyc.detach()),
                "l_attr": float(l_attr.detach()), "total": float(total.detach()),
                "d_loss": float(d_loss.detach()), "r1": float(r1.detach()),
            })
        if checkpoint_dir and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            ckdir = Path(checkpoint_dir)
            save_carigan(ckdir / f"p2c_{it:06d}.npz", p2c)
            save_carigan(ckdir / f"c2p_{it:06d}.npz", c2p)

    for name, model in (("p2c", p2c.stack), ("c2p", c2p.stack)):
        if weights_fingerprint(model) != fingerprints[name]:
            raise TrainingDiverged(f"frozen {name} stack weights changed during block training")
    p2c.blocks.eval()
    c2p.blocks.eval()
    return p2c, c2p, log


def train_domain_stack(dataset, base: SynthesisStack | None, cfg: TrainConfig,
                       model_cfg: ModelConfig | None = None, domain: str = "photo",
                       checkpoint_dir=None, log_path=None,
                       mean_w_samples: int = 10_000) -> SynthesisStack:
    """GAN-train one stack on an image dataset; with `base`, start from a copy
    (fine-tuning). Zero iterations returns the untouched copy."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    res = dataset[0][0].shape[-1]
    if base is not None:
        stack = copy.deepcopy(base)
        stack.domain_tag = domain
        stack.block_sources = [domain] * stack.n_scales
    else:
        if model_cfg is None:
            raise ValueError("model_cfg is required when training from scratch")
        torch.manual_seed(cfg.seed)
        stack = SynthesisStack(model_cfg, domain)
    if stack.resolution != res:
        raise ValueError(f"dataset resolution {res} != stack resolution {stack.resolution}")
    if cfg.iterations == 0:
        return stack

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    stack.train()
    for prm in stack.parameters():
        prm.requires_grad_(True)
    disc = ImageDiscriminator(res)
    mapping_ids = {id(prm) for prm in stack.mapping.parameters()}
    groups = [
        {"params": [prm for prm in stack.parameters() if id(prm) in mapping_ids], "lr": cfg.lr * 0.01},
        {"params": [prm for prm in stack.parameters() if id(prm) not in mapping_ids], "lr": cfg.lr},
    ]
    opt_g = torch.optim.Adam(groups, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    images = torch.stack([dataset[i][0] for i in range(len(dataset))])
    log = LossLog(log_path)

    for it in range(1, cfg.iterations + 1):
        z = torch.randn(cfg.batch_size, stack.cfg.d_z, generator=gen)
        code = broadcast_w(stack.map_latent(z), stack.n_style_layers)
        fake, _ = stack.synthesize(code, random_noise(stack.n_scales, cfg.batch_size, gen))
        g_loss = losses.nonsat_logistic_g(disc(fake))
        if not torch.isfinite(g_loss):
            raise TrainingDiverged(f"non-finite generator loss at iteration {it}")
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=gen)
        real = images[idx]
        d_loss = losses.nonsat_logistic_d(disc(real), disc(fake.detach()))
        r1 = torch.zeros(())
        if w_gamma_active := (cfg.weights.r1_gamma > 0 and it % cfg.r1_interval == 0):
            r1 = losses.r1_penalty(disc, real.clone().requires_grad_(True), cfg.weights.r1_gamma)
        opt_d.zero_grad()
        (d_loss + r1).backward()
        opt_d.step()

        if it % cfg.log_every == 0:
            log.write({"iteration": it, "g_loss": float(g_loss.detach()), "d_loss": float(d_loss.detach()),
                       "r1": float(r1.detach()) if w_gamma_active else 0.0})
        if checkpoint_dir and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            from .synthesis import save_stack

            stack.estimate_mean_w(mean_w_samples, seed=cfg.seed)
            save_stack(Path(checkpoint_dir) / f"{domain}_{it:06d}.npz", stack)

    stack.estimate_mean_w(mean_w_samples, seed=cfg.seed)
    stack.eval()
    return stack
