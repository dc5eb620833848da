"""Quantitative evaluation: Fréchet distance between image sets, attribute
preservation sweeps, loss-ablation grids, and layer-boundary sweep reports.

The desk-scale feature extractor is the trained photo attribute-classifier
trunk, so Fréchet numbers are internally comparable across checkpoints of this
repo but are NOT on the published full-scale FID scale; full-scale figures
appear in reports as context rows only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses as losses_mod
from .config import TrainConfig
from .imageio import image_grid, save_image
from .perception import AttributeClassifier, classify
from .synthesis import SynthesisStack, random_noise

# reported full-scale reference numbers (256^2 pipeline); context only,
# not comparable to desk-scale measurements
FULL_SCALE_FID_CONTEXT = 52.35
FULL_SCALE_ATTR_CONTEXT = {
    "identity-matching hand-drawn (GT labels)": 85.26,
    "identity-matching hand-drawn (predicted labels)": 73.73,
    "full-scale model (predicted labels)": 70.38,
    "random hand-drawn (GT labels)": 66.16,
}

EIG_CLIP = -1e-6


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def collect_stats(images: torch.Tensor, extractor, batch: int = 128) -> FeatureStats:
    """Empirical mean/covariance of extractor features over an image set."""
    if len(images) < 2:
        raise ValueError("need at least 2 images for feature statistics")
    feats = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            feats.append(extractor(images[i:i + batch]).double().cpu().numpy())
    x = np.concatenate(feats)
    return FeatureStats(mean=x.mean(axis=0), cov=np.cov(x, rowvar=False), n=len(x))


def _psd_sqrt(mat: np.ndarray, what: str) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(mat)
    if eigval.min() < EIG_CLIP:
        raise ValueError(f"{what}: not positive semidefinite (min eigenvalue {eigval.min():.3e})")
    return (eigvec * np.sqrt(np.clip(eigval, 0, None))) @ eigvec.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The matrix square root is taken symmetrically: sqrt(S_b)^T S_a sqrt(S_b)
    is PSD, so an eigendecomposition with negative-eigenvalue clipping at
    -1e-6 suffices; asymmetry or eigenvalues below the tolerance are errors.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"feature dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    for name, stats in (("a", a), ("b", b)):
        if not np.allclose(stats.cov, stats.cov.T, atol=1e-8):
            raise ValueError(f"cov[{name}] is not symmetric")
    sb = _psd_sqrt((b.cov + b.cov.T) / 2, "cov[b]")
    inner = sb @ ((a.cov + a.cov.T) / 2) @ sb
    eigval = np.linalg.eigvalsh((inner + inner.T) / 2)
    if eigval.min() < EIG_CLIP:
        raise ValueError(f"cross term not PSD (min eigenvalue {eigval.min():.3e})")
    tr_sqrt = np.sqrt(np.clip(eigval, 0, None)).sum()
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_sqrt)


def classifier_extractor(clf: AttributeClassifier):
    clf.eval()

    def extract(images: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return clf.features(images)

    return extract


def frechet_between_images(a: torch.Tensor, b: torch.Tensor, clf: AttributeClassifier) -> float:
    ex = classifier_extractor(clf)
    return frechet_distance(collect_stats(a, ex), collect_stats(b, ex))


# --- attribute preservation --------------------------------------------------


def attr_preservation_report(photos: torch.Tensor, caricatures_by_method: dict[str, torch.Tensor],
                             clf_photo: AttributeClassifier, clf_cari: AttributeClassifier,
                             threshold: float = 0.5, n_shuffles: int = 5, seed: int = 0) -> dict:
    """Mean m/M matching accuracy per method, plus a shuffled-pairing lower
    bound row and the published full-scale rows as context."""
    if len(photos) == 0 or not caricatures_by_method:
        raise ValueError("empty inputs")
    probs_photo = classify(clf_photo, photos)
    rows = {}
    first = None
    for method, caris in caricatures_by_method.items():
        if len(caris) != len(photos):
            raise ValueError(f"{method}: {len(caris)} caricatures for {len(photos)} photos")
        probs_cari = classify(clf_cari, caris)
        if first is None:
            first = probs_cari
        match = ((probs_photo >= threshold) == (probs_cari >= threshold)).float().mean(dim=1)
        rows[method] = float(match.mean())
    gen = torch.Generator().manual_seed(seed)
    shuffled = []
    for _ in range(n_shuffles):
        perm = torch.randperm(len(photos), generator=gen)
        match = ((probs_photo >= threshold) == (first[perm] >= threshold)).float().mean(dim=1)
        shuffled.append(float(match.mean()))
    return {"methods": rows, "random_pairing": float(np.mean(shuffled)),
            "context_full_scale_percent": dict(FULL_SCALE_ATTR_CONTEXT)}


def render_report_table(report: dict) -> str:
    lines = ["method\taccuracy"]
    for method, acc in report["methods"].items():
        lines.append(f"{method}\t{acc:.4f}")
    lines.append(f"random-pairing lower bound\t{report['random_pairing']:.4f}")
    lines.append("# context: published full-scale accuracies (%), not desk-scale comparable")
    for name, val in report["context_full_scale_percent"].items():
        lines.append(f"# {name}\t{val:.2f}")
    return "\n".join(lines) + "\n"


# --- ablation and sweep reports ----------------------------------------------

ABLATION_COMBOS = (
    ("adv",),
    ("adv", "cyc"),
    ("adv", "attr"),
    ("adv", "cyc", "attr"),
)


def ablation_grid(photo: SynthesisStack, cari: SynthesisStack, p: int, cfg: TrainConfig,
                  clf_photo, clf_cari, embedder, input_codes: torch.Tensor,
                  out_dir=None, n_eval: int = 64,
                  combos=ABLATION_COMBOS) -> dict:
    """Train one block set per loss combination and compare attribute
    preservation on freshly sampled photos; writes a side-by-side image grid
    (one column per combination) when out_dir is given."""
    import dataclasses

    from .training import make_exaggeration_setup, sample_training_batch, train_exaggeration

    results = {}
    renders: dict[str, list[torch.Tensor]] = {}
    for combo in combos:
        run_cfg = dataclasses.replace(cfg, loss_terms=tuple(combo))
        p2c, c2p, discs = make_exaggeration_setup(photo, cari, p, cfg.seed,
                                                  block_init_std=cfg.block_init_std)
        p2c, c2p, _ = train_exaggeration(photo, cari, p2c, c2p, discs, run_cfg,
                                         clf_photo=clf_photo, clf_cari=clf_cari, embedder=embedder)
        eval_batch = sample_training_batch(photo, cari, n_eval, torch.Generator().manual_seed(cfg.seed + 1))
        with torch.no_grad():
            out, _ = p2c.forward_caricature(eval_batch.photo_code, eval_batch.photo_noise)
        report = attr_preservation_report(eval_batch.photo_img, {"run": out}, clf_photo, clf_cari)
        name = "+".join(combo)
        results[name] = report["methods"]["run"]
        with torch.no_grad():
            noise = random_noise(photo.n_scales, input_codes.shape[0], torch.Generator().manual_seed(0))
            imgs, _ = p2c.forward_caricature(input_codes, noise)
        renders[name] = [imgs[i] for i in range(len(imgs))]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        columns = list(renders)
        tiles = []
        for i in range(input_codes.shape[0]):
            tiles += [renders[c][i] for c in columns]
        save_image(out_dir / "ablation_grid.png", image_grid(tiles, ncol=len(columns)))
        table = "losses\tattr_accuracy\n" + "".join(f"{k}\t{v:.4f}\n" for k, v in results.items())
        (out_dir / "ablation.tsv").write_text(table)
    return results


def boundary_sweep_report(photo: SynthesisStack, cari: SynthesisStack, codes: torch.Tensor,
                          out_dir) -> Path:
    """One row per code, one column per mix boundary p = n_scales..0."""
    from .mixing import sweep_boundary

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = random_noise(photo.n_scales, codes.shape[0] if codes.dim() == 3 else 1,
                         torch.Generator().manual_seed(0))
    tiles = []
    n_cols = photo.n_scales + 1
    codes_b = codes if codes.dim() == 3 else codes.unsqueeze(0)
    for i in range(codes_b.shape[0]):
        images = sweep_boundary(photo, cari, codes_b[i], [n[i:i + 1] for n in noise])
        tiles += [img for img in images]
    path = out_dir / "boundary_sweep.png"
    save_image(path, image_grid(tiles, ncol=n_cols))
    return path


def fid_report(stats_a: FeatureStats, stats_b: FeatureStats, out_path=None) -> str:
    fd = frechet_distance(stats_a, stats_b)
    text = (
        "metric\tvalue\n"
        f"frechet_distance\t{fd:.6f}\n"
        f"# context: published full-scale FID {FULL_SCALE_FID_CONTEXT} (different extractor; not comparable)\n"
    )
    if out_path is not None:
        Path(out_path).write_text(text)
    return text
