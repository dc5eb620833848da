"""Unified command line: training, inversion, generation, evaluation, the
studio service, and style/direction management.

Every command takes `--config <file>` plus repeatable `--set key.path=value`
overrides. Config/schema problems exit with code 2 and the offending field
path; other failures exit 1 with a one-line error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .checkpoint import CheckpointError
from .config import Config, ConfigError, load_config, parse_override


def _load_cfg(config_path, sets) -> Config:
    overrides = dict(parse_override(s) for s in sets)
    if config_path is None:
        from .config import config_from_dict

        data: dict = {}
        for key, value in overrides.items():
            from .config import _set_dotted

            _set_dotted(data, key, value)
        return config_from_dict(data)
    return load_config(config_path, overrides)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigError as exc:
            raise click.UsageError(str(exc)) from exc  # exit code 2
        except (CheckpointError, FileNotFoundError, ValueError, KeyError) as exc:
            raise click.ClickException(str(exc)) from exc  # exit code 1


@click.group(cls=_Group)
def main():
    """Photo-to-caricature toolkit."""


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          default=None, help="YAML config file.")
set_opt = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                       help="Override a config value by dotted path.")


@main.command("train-stack")
@config_opt
@set_opt
@click.option("--domain", type=click.Choice(["photo", "caricature"]), required=True)
@click.option("--base", "base_path", type=click.Path(exists=True), default=None,
              help="Fine-tune from this stack checkpoint.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--checkpoint-dir", type=click.Path(), default=None)
@click.option("--log", "log_path", type=click.Path(), default=None)
def train_stack_cmd(config_path, sets, domain, base_path, out_path, checkpoint_dir, log_path):
    """Train (or fine-tune) one domain stack on the synthetic dataset."""
    from .data import SyntheticFaces
    from .synthesis import load_stack, save_stack
    from .training import train_domain_stack

    cfg = _load_cfg(config_path, sets)
    dataset = SyntheticFaces(domain, cfg.data.n_train, cfg.data, size=cfg.model.resolution)
    base = load_stack(base_path) if base_path else None
    stack = train_domain_stack(dataset, base, cfg.train, cfg.model, domain,
                               checkpoint_dir=checkpoint_dir, log_path=log_path)
    save_stack(out_path, stack)
    click.echo(f"wrote {out_path}")


@main.command("train-blocks")
@config_opt
@set_opt
@click.option("--photo", "photo_path", type=click.Path(exists=True), required=True)
@click.option("--cari", "cari_path", type=click.Path(exists=True), required=True)
@click.option("--clf-photo", type=click.Path(exists=True), default=None)
@click.option("--clf-cari", type=click.Path(exists=True), default=None)
@click.option("--embedder", "embedder_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
def train_blocks_cmd(config_path, sets, photo_path, cari_path, clf_photo, clf_cari,
                     embedder_path, out_dir, log_path):
    """Train both exaggeration block sets against frozen stacks."""
    from .exaggeration import save_carigan
    from .perception import load_classifier, load_embedder
    from .synthesis import load_stack
    from .training import make_exaggeration_setup, train_exaggeration

    cfg = _load_cfg(config_path, sets)
    photo, cari = load_stack(photo_path), load_stack(cari_path)
    p2c, c2p, discs = make_exaggeration_setup(photo, cari, cfg.mix_boundary, cfg.train.seed,
                                              block_init_std=cfg.train.block_init_std)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p2c, c2p, _ = train_exaggeration(
        photo, cari, p2c, c2p, discs, cfg.train,
        clf_photo=load_classifier(clf_photo) if clf_photo else None,
        clf_cari=load_classifier(clf_cari) if clf_cari else None,
        embedder=load_embedder(embedder_path) if embedder_path else None,
        log_path=log_path or out / "loss_log.jsonl", checkpoint_dir=out)
    save_carigan(out / "p2c.npz", p2c)
    save_carigan(out / "c2p.npz", c2p)
    click.echo(f"wrote {out / 'p2c.npz'} and {out / 'c2p.npz'}")


@main.command("invert")
@config_opt
@set_opt
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "stack_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def invert_cmd(config_path, sets, image_path, stack_path, out_path):
    """Embed a photo into the stack's W+ space (two-stage optimization)."""
    from .imageio import center_crop_resize, load_image
    from .inversion import invert, save_inversion
    from .synthesis import load_stack

    cfg = _load_cfg(config_path, sets)
    stack = load_stack(stack_path)
    target = center_crop_resize(load_image(image_path), stack.resolution)
    result = invert(stack, target, cfg.inversion)
    save_inversion(out_path, result)
    click.echo(f"wrote {out_path} (final loss {result.final_loss:.6f})")


@main.command("generate")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True,
              help="carigan checkpoint (mixed stack + blocks).")
@click.option("--latent", "latent_path", type=click.Path(exists=True), default=None,
              help="Inversion result file.")
@click.option("--latent-id", default=None, help="Key into a latent store directory.")
@click.option("--store", "store_dir", type=click.Path(), default=None,
              help="Latent store directory (with --latent-id).")
@click.option("--seed", type=int, default=None, help="Sample a fresh latent from this seed.")
@click.option("--alphas", default=None, help="Comma-separated per-block scale factors.")
@click.option("--style", "style_id", default=None)
@click.option("--bank", "bank_dir", type=click.Path(), default=None)
@click.option("--edit", "edits", multiple=True, metavar="NAME:MAGNITUDE")
@click.option("--directions-dir", type=click.Path(), default=None)
@click.option("--noise-seed", type=int, default=None)
@click.option("--size", "output_size", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def generate_cmd(model_path, latent_path, latent_id, store_dir, seed, alphas, style_id,
                 bank_dir, edits, directions_dir, noise_seed, output_size, out_path):
    """Render one caricature deterministically from a latent + controls."""
    from .exaggeration import load_carigan
    from .imageio import resize, save_image
    from .inversion import load_inversion
    from .manipulation import StyleBank, apply_direction, load_direction
    from .synthesis import broadcast_w, random_noise, zero_noise

    model = load_carigan(model_path)
    if latent_path:
        result = load_inversion(latent_path)
        code, noise = result.code, result.noise
    elif latent_id and store_dir:
        result = load_inversion(Path(store_dir) / f"{latent_id}.npz")
        code, noise = result.code, result.noise
    elif seed is not None:
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(1, model.stack.cfg.d_z, generator=gen)
        code = broadcast_w(model.stack.map_latent(z), model.stack.n_style_layers)[0]
        noise = zero_noise(model.stack.n_scales)
    else:
        raise click.UsageError("provide --latent, --latent-id with --store, or --seed")
    if noise_seed is not None:
        noise = random_noise(model.stack.n_scales, 1, torch.Generator().manual_seed(noise_seed))
    alpha_values = None
    if alphas is not None:
        alpha_values = [float(a) for a in alphas.split(",") if a != ""]
        alpha_values = alpha_values[:model.p] + [0.0] * max(0, model.p - len(alpha_values))
    for spec in edits:
        name, _, mag = spec.partition(":")
        if directions_dir is None:
            raise click.UsageError("--edit requires --directions-dir")
        direction = load_direction(Path(directions_dir) / f"{name}.npz")
        code = apply_direction(code, direction, float(mag))
    style_code = None
    if style_id is not None:
        if bank_dir is None:
            raise click.UsageError("--style requires --bank")
        style_code = StyleBank(bank_dir).get(style_id).code
    with torch.no_grad():
        image, _ = model.forward_caricature(code, noise, style_code=style_code, alphas=alpha_values)
    img = image.squeeze(0)
    if output_size is not None:
        img = resize(img, output_size)
    save_image(out_path, img)
    click.echo(f"wrote {out_path}")


@main.group("eval")
def eval_group():
    """Quantitative reports."""


def _load_assets(assets_dir, need=()):
    from .exaggeration import load_carigan
    from .perception import load_classifier, load_embedder
    from .synthesis import load_stack

    a = Path(assets_dir)
    loaders = {
        "photo": (load_stack, "photo_stack.npz"),
        "cari": (load_stack, "cari_stack.npz"),
        "p2c": (load_carigan, "p2c.npz"),
        "clf_photo": (load_classifier, "clf_photo.npz"),
        "clf_cari": (load_classifier, "clf_cari.npz"),
        "embedder": (load_embedder, "embedder.npz"),
    }
    assets = {}
    for name, (loader, filename) in loaders.items():
        path = a / filename
        if path.exists():
            assets[name] = loader(path)
        elif name in ("photo", "cari") or name in need:
            raise click.ClickException(f"assets dir lacks {filename}")
        else:
            assets[name] = None
    return assets


@eval_group.command("fid")
@config_opt
@set_opt
@click.option("--assets", "assets_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--samples", type=int, default=256)
def eval_fid_cmd(config_path, sets, assets_dir, out_path, samples):
    """Fréchet distance between caricature-stack samples and the synthetic caricature set."""
    from .data import SyntheticFaces, stack_images
    from .evalkit import classifier_extractor, collect_stats, fid_report
    from .training import sample_training_batch

    cfg = _load_cfg(config_path, sets)
    assets = _load_assets(assets_dir, need=("clf_photo",))
    batch = sample_training_batch(assets["photo"], assets["cari"], samples,
                                  torch.Generator().manual_seed(0))
    dataset = SyntheticFaces("caricature", samples, cfg.data, size=cfg.model.resolution)
    ex = classifier_extractor(assets["clf_photo"])
    text = fid_report(collect_stats(batch.cari_img, ex), collect_stats(stack_images(dataset), ex), out_path)
    click.echo(text)


@eval_group.command("attrs")
@config_opt
@set_opt
@click.option("--assets", "assets_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--samples", type=int, default=128)
def eval_attrs_cmd(config_path, sets, assets_dir, out_path, samples):
    """Attribute preservation: photos vs their generated caricatures."""
    from .evalkit import attr_preservation_report, render_report_table
    from .training import sample_training_batch

    _load_cfg(config_path, sets)
    assets = _load_assets(assets_dir, need=("p2c", "clf_photo", "clf_cari"))
    batch = sample_training_batch(assets["photo"], assets["cari"], samples,
                                  torch.Generator().manual_seed(0))
    with torch.no_grad():
        out, _ = assets["p2c"].forward_caricature(batch.photo_code, batch.photo_noise)
    report = attr_preservation_report(batch.photo_img, {"carikit": out},
                                      assets["clf_photo"], assets["clf_cari"])
    text = render_report_table(report)
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@eval_group.command("ablation")
@config_opt
@set_opt
@click.option("--assets", "assets_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--inputs", type=int, default=4)
def eval_ablation_cmd(config_path, sets, assets_dir, out_dir, inputs):
    """Train blocks under each loss combination and compare (slow)."""
    from .evalkit import ablation_grid
    from .synthesis import sample_codes

    cfg = _load_cfg(config_path, sets)
    assets = _load_assets(assets_dir, need=("clf_photo", "clf_cari", "embedder"))
    codes = sample_codes(assets["photo"], inputs, torch.Generator().manual_seed(1), psi=0.7)
    results = ablation_grid(assets["photo"], assets["cari"], cfg.mix_boundary, cfg.train,
                            assets["clf_photo"], assets["clf_cari"], assets["embedder"],
                            codes, out_dir=out_dir)
    click.echo(json.dumps(results, indent=2))


@eval_group.command("sweep")
@config_opt
@set_opt
@click.option("--assets", "assets_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--inputs", type=int, default=4)
def eval_sweep_cmd(config_path, sets, assets_dir, out_dir, inputs):
    """Layer-boundary sweep grid (p = n_scales .. 0)."""
    from .evalkit import boundary_sweep_report
    from .synthesis import sample_codes

    _load_cfg(config_path, sets)
    assets = _load_assets(assets_dir)
    codes = sample_codes(assets["photo"], inputs, torch.Generator().manual_seed(2), psi=0.7)
    path = boundary_sweep_report(assets["photo"], assets["cari"], codes, out_dir)
    click.echo(f"wrote {path}")


@main.command("serve")
@config_opt
@set_opt
@click.option("--assets", "assets_dir", type=click.Path(exists=True), required=True)
@click.option("--work", "work_dir", type=click.Path(), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve_cmd(config_path, sets, assets_dir, work_dir, host, port):
    """Run the studio HTTP service."""
    import uvicorn

    from .service import ServiceAssets, ServiceState, create_app

    cfg = _load_cfg(config_path, sets)
    state = ServiceState(ServiceAssets.load(assets_dir), cfg, work_dir)
    uvicorn.run(create_app(state), host=host, port=port)


@main.group("styles")
def styles_group():
    """Style bank management."""


@styles_group.command("curate")
@click.option("--bank", "bank_dir", type=click.Path(), required=True)
@click.option("--cari", "cari_path", type=click.Path(exists=True), required=True)
@click.option("-n", "n_samples", type=int, default=8)
@click.option("--psi", type=float, default=0.7)
@click.option("--seed", type=int, default=0)
def styles_curate_cmd(bank_dir, cari_path, n_samples, psi, seed):
    from .manipulation import StyleBank, curate_styles
    from .synthesis import load_stack

    entries = curate_styles(load_stack(cari_path), n_samples, psi, bank=StyleBank(bank_dir), seed=seed)
    for e in entries:
        click.echo(e.id)


@styles_group.command("list")
@click.option("--bank", "bank_dir", type=click.Path(exists=True), required=True)
def styles_list_cmd(bank_dir):
    from .manipulation import StyleBank

    for entry_id in StyleBank(bank_dir).ids():
        click.echo(entry_id)


@styles_group.command("delete")
@click.option("--bank", "bank_dir", type=click.Path(exists=True), required=True)
@click.argument("style_id")
def styles_delete_cmd(bank_dir, style_id):
    from .manipulation import StyleBank

    StyleBank(bank_dir).delete(style_id)
    click.echo(f"deleted {style_id}")


@main.group("directions")
def directions_group():
    """Latent edit directions."""


@directions_group.command("find")
@config_opt
@set_opt
@click.option("--assets", "assets_dir", type=click.Path(exists=True), required=True)
@click.option("--attribute", required=True, help="Attribute name the direction should control.")
@click.option("--name", default=None, help="Direction name (defaults to the attribute).")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--samples", type=int, default=256)
def directions_find_cmd(config_path, sets, assets_dir, attribute, name, out_path, samples):
    """Search a W direction separating high/low classifier scores for one attribute."""
    from .data import ATTRIBUTE_NAMES
    from .manipulation import find_direction, save_direction
    from .perception import classify
    from .training import sample_training_batch

    cfg = _load_cfg(config_path, sets)
    assets = _load_assets(assets_dir, need=("clf_photo",))
    names = ATTRIBUTE_NAMES[:cfg.perception.n_attributes]
    if attribute not in names:
        raise click.UsageError(f"unknown attribute {attribute!r}; choose from {names}")
    k = names.index(attribute)
    batch = sample_training_batch(assets["photo"], assets["photo"], samples,
                                  torch.Generator().manual_seed(3))
    probs = classify(assets["clf_photo"], batch.photo_img)[:, k]
    order = torch.argsort(probs)
    take = max(8, samples // 8)
    labeled = [(batch.photo_code[i, 0], -1) for i in order[:take].tolist()]
    labeled += [(batch.photo_code[i, 0], +1) for i in order[-take:].tolist()]
    direction = find_direction(labeled, name or attribute)
    save_direction(out_path, direction)
    click.echo(f"wrote {out_path}")


@directions_group.command("list")
@click.option("--dir", "directions_dir", type=click.Path(exists=True), required=True)
def directions_list_cmd(directions_dir):
    from .manipulation import load_direction

    for path in sorted(Path(directions_dir).glob("*.npz")):
        d = load_direction(path)
        click.echo(f"{d.name}\trange=[{d.range[0]}, {d.range[1]}]")


if __name__ == "__main__":
    main()
