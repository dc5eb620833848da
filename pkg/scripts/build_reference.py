#!/usr/bin/env python3
"""Build the committed desk-scale reference assets under assets/reference/.

Produces: photo_stack.npz, cari_stack.npz (fine-tuned from photo), the two
attribute classifiers, the identity embedder, trained p2c/c2p models, an
expression edit direction, and a curated style bank. Deterministic under the
seeds below on a fixed machine/thread count. Existing files are kept unless
--force is given.
"""

import argparse
import sys
import time
from pathlib import Path

import torch

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from carikit.config import load_config  # noqa: E402
from carikit.data import ATTRIBUTE_NAMES, IdentityFaces, SyntheticFaces  # noqa: E402
from carikit.exaggeration import load_carigan, save_carigan  # noqa: E402
from carikit.manipulation import StyleBank, curate_styles, find_direction, save_direction  # noqa: E402
from carikit.perception import (  # noqa: E402
    classify,
    load_classifier,
    load_embedder,
    save_classifier,
    save_embedder,
    train_classifier,
    train_embedder,
)
from carikit.synthesis import load_stack, save_stack  # noqa: E402
from carikit.training import make_exaggeration_setup, train_domain_stack, train_exaggeration  # noqa: E402

STACK_ITERATIONS = 1500
FINETUNE_ITERATIONS = 700
BLOCK_ITERATIONS = 400


def log(msg):
    print(f"[build_reference +{time.time() - T0:7.1f}s] {msg}", flush=True)


T0 = time.time()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=ROOT / "assets" / "reference", type=Path)
    ap.add_argument("--config", default=ROOT / "configs" / "desk32.yaml", type=Path)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config)

    import dataclasses

    def done(name):
        return (out / name).exists() and not args.force

    # 1. photo stack from scratch
    if done("photo_stack.npz"):
        photo = load_stack(out / "photo_stack.npz")
        log("photo_stack.npz exists, skipping")
    else:
        log(f"training photo stack ({STACK_ITERATIONS} iterations)")
        ds = SyntheticFaces("photo", cfg.data.n_train, cfg.data, size=cfg.model.resolution)
        tc = dataclasses.replace(cfg.train, iterations=STACK_ITERATIONS, batch_size=16, seed=11)
        photo = train_domain_stack(ds, None, tc, cfg.model, "photo", mean_w_samples=100_000)
        save_stack(out / "photo_stack.npz", photo)
        log("photo stack done")

    # 2. caricature stack fine-tuned from photo
    if done("cari_stack.npz"):
        cari = load_stack(out / "cari_stack.npz")
        log("cari_stack.npz exists, skipping")
    else:
        log(f"fine-tuning caricature stack ({FINETUNE_ITERATIONS} iterations)")
        ds = SyntheticFaces("caricature", cfg.data.n_train, cfg.data, size=cfg.model.resolution)
        tc = dataclasses.replace(cfg.train, iterations=FINETUNE_ITERATIONS, batch_size=16, seed=12)
        cari = train_domain_stack(ds, photo, tc, domain="caricature", mean_w_samples=100_000)
        save_stack(out / "cari_stack.npz", cari)
        log("caricature stack done")

    # 3. attribute classifiers
    pcfg = dataclasses.replace(cfg.perception, epochs=8, seed=21)
    held = {}
    for domain, name in (("photo", "clf_photo.npz"), ("caricature", "clf_cari.npz")):
        if done(name):
            log(f"{name} exists, skipping")
            continue
        log(f"training {domain} attribute classifier")
        train_set = SyntheticFaces(domain, cfg.data.n_train, cfg.data, size=cfg.model.resolution)
        heldout = SyntheticFaces(domain, cfg.data.n_heldout, cfg.data, seed=cfg.data.seed + 90,
                                 size=cfg.model.resolution)
        clf, acc = train_classifier(train_set, domain, pcfg, heldout=heldout)
        save_classifier(out / name, clf)
        held[domain] = acc
        log(f"{domain} classifier held-out accuracy {acc:.4f}")

    # 4. identity embedder
    if done("embedder.npz"):
        log("embedder.npz exists, skipping")
    else:
        log("training identity embedder")
        ecfg = dataclasses.replace(cfg.perception, epochs=5, seed=22)
        emb = train_embedder(IdentityFaces("photo", 96, 4, cfg.data, size=cfg.model.resolution), ecfg)
        save_embedder(out / "embedder.npz", emb)
        log("embedder done")

    clf_photo = load_classifier(out / "clf_photo.npz")
    clf_cari = load_classifier(out / "clf_cari.npz")
    embedder = load_embedder(out / "embedder.npz")

    # 5. exaggeration blocks (both directions, default losses)
    if done("p2c.npz") and done("c2p.npz"):
        log("p2c/c2p exist, skipping")
    else:
        log(f"training exaggeration blocks ({BLOCK_ITERATIONS} iterations)")
        tc = dataclasses.replace(cfg.train, iterations=BLOCK_ITERATIONS, seed=31)
        p2c, c2p, discs = make_exaggeration_setup(photo, cari, cfg.mix_boundary, seed=31,
                                                  block_init_std=tc.block_init_std)
        p2c, c2p, _ = train_exaggeration(photo, cari, p2c, c2p, discs, tc,
                                         clf_photo=clf_photo, clf_cari=clf_cari, embedder=embedder,
                                         log_path=out / "blocks_loss_log.jsonl")
        save_carigan(out / "p2c.npz", p2c)
        save_carigan(out / "c2p.npz", c2p)
        log("blocks done")

    # 6. expression direction from classifier-labeled samples
    ddir = out / "directions"
    if (ddir / "expression.npz").exists() and not args.force:
        log("expression direction exists, skipping")
    else:
        log("searching expression direction")
        from carikit.training import sample_training_batch

        batch = sample_training_batch(photo, photo, 256, torch.Generator().manual_seed(41))
        k = ATTRIBUTE_NAMES.index("wide_mouth")
        probs = classify(clf_photo, batch.photo_img)[:, k]
        order = torch.argsort(probs)
        take = 32
        labeled = [(batch.photo_code[i, 0], -1) for i in order[:take].tolist()]
        labeled += [(batch.photo_code[i, 0], +1) for i in order[-take:].tolist()]
        direction = find_direction(labeled, "expression")
        ddir.mkdir(exist_ok=True)
        save_direction(ddir / "expression.npz", direction)
        log("direction done")

    # 7. starter style bank
    bank_dir = out / "styles"
    if (bank_dir / "index.json").exists() and not args.force:
        log("style bank exists, skipping")
    else:
        log("curating starter style bank")
        curate_styles(load_stack(out / "cari_stack.npz"), 8, psi=0.7,
                      bank=StyleBank(bank_dir), seed=51)
    log("all reference assets built")


if __name__ == "__main__":
    main()
