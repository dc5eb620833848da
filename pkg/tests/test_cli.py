import torch
from click.testing import CliRunner

from carikit.cli import main
from carikit.exaggeration import build_carigan, save_carigan
from carikit.imageio import encode_png, save_image
from carikit.mixing import build_p2c
from carikit.synthesis import broadcast_w, save_stack, zero_noise


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_help_lists_subcommands():
    result = run("--help")
    assert result.exit_code == 0
    for cmd in ("train-stack", "train-blocks", "invert", "generate", "eval", "serve",
                "styles", "directions"):
        assert cmd in result.output


def test_unknown_flag_exits_2():
    result = run("generate", "--bogus-flag")
    assert result.exit_code == 2
    assert "No such option" in result.output or "no such option" in result.output.lower()


def test_invalid_config_exits_2_with_field_path(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("train:\n  batch_size: 1\n")
    result = run("train-stack", "--config", cfg, "--domain", "photo", "--out", tmp_path / "x.npz")
    assert result.exit_code == 2
    assert "train.batch_size" in result.output


def test_config_override_validation(tmp_path):
    cfg = tmp_path / "ok.yaml"
    cfg.write_text("{}\n")
    result = run("train-stack", "--config", cfg, "--set", "model.n_scales=0",
                 "--domain", "photo", "--out", tmp_path / "x.npz")
    assert result.exit_code == 2
    assert "model.n_scales" in result.output


def test_generate_alpha_zero_equals_mixed_render(tmp_path, photo_stack, cari_stack):
    torch.manual_seed(0)
    model = build_carigan(build_p2c(photo_stack, cari_stack, 2), "p2c")
    for block in model.blocks.blocks:
        torch.nn.init.normal_(block.conv2.weight, std=0.1)
    model_path = tmp_path / "p2c.npz"
    save_carigan(model_path, model)
    out_path = tmp_path / "out.png"
    result = run("generate", "--model", model_path, "--seed", 5, "--alphas", "0,0",
                 "--out", out_path)
    assert result.exit_code == 0, result.output
    # replicate the latent path: seed -> z -> mapping -> broadcast, zero noise
    gen = torch.Generator().manual_seed(5)
    z = torch.randn(1, photo_stack.cfg.d_z, generator=gen)
    code = broadcast_w(photo_stack.map_latent(z), photo_stack.n_style_layers)
    with torch.no_grad():
        img, _ = model.stack.synthesize(code, zero_noise(photo_stack.n_scales))
    assert out_path.read_bytes() == encode_png(img)


def test_generate_requires_latent_source(tmp_path, photo_stack, cari_stack):
    torch.manual_seed(0)
    model_path = tmp_path / "p2c.npz"
    save_carigan(model_path, build_carigan(build_p2c(photo_stack, cari_stack, 2), "p2c"))
    result = run("generate", "--model", model_path, "--out", tmp_path / "x.png")
    assert result.exit_code == 2
    assert "latent" in result.output


def test_invert_cli_roundtrip(tmp_path, photo_stack):
    from carikit.inversion import load_inversion
    from carikit.synthesis import sample_codes

    stack_path = tmp_path / "photo.npz"
    save_stack(stack_path, photo_stack)
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(3))
    with torch.no_grad():
        img, _ = photo_stack.synthesize(code, zero_noise(photo_stack.n_scales))
    img_path = tmp_path / "target.png"
    save_image(img_path, img)
    out_path = tmp_path / "latent.npz"
    result = run("invert", "--image", img_path, "--checkpoint", stack_path, "--out", out_path,
                 "--set", "inversion.stage1_steps=3", "--set", "inversion.stage2_steps=3",
                 "--set", "model.d_z=16", "--set", "model.d_w=16",
                 "--set", "model.channels=[24,16,12,8]", "--set", "model.mapping_layers=2")
    assert result.exit_code == 0, result.output
    loaded = load_inversion(out_path)
    assert loaded.code.shape == (photo_stack.n_style_layers, photo_stack.cfg.d_w)


def test_train_stack_cli_tiny(tmp_path):
    out = tmp_path / "stack.npz"
    result = run("train-stack", "--domain", "photo", "--out", out,
                 "--set", "model.d_z=8", "--set", "model.d_w=8",
                 "--set", "model.n_scales=4", "--set", "model.channels=[8,8,8,8]",
                 "--set", "model.mapping_layers=1",
                 "--set", "train.iterations=2", "--set", "train.batch_size=2",
                 "--set", "data.n_train=8")
    assert result.exit_code == 0, result.output
    from carikit.synthesis import load_stack

    stack = load_stack(out)
    assert stack.domain_tag == "photo"


def test_styles_cli(tmp_path, cari_stack):
    stack_path = tmp_path / "cari.npz"
    save_stack(stack_path, cari_stack)
    bank = tmp_path / "bank"
    result = run("styles", "curate", "--bank", bank, "--cari", stack_path, "-n", 3)
    assert result.exit_code == 0, result.output
    ids = result.output.split()
    assert len(ids) == 3
    listing = run("styles", "list", "--bank", bank)
    assert listing.output.split() == ids
    deleted = run("styles", "delete", "--bank", bank, ids[0])
    assert deleted.exit_code == 0
    assert ids[0] not in run("styles", "list", "--bank", bank).output


def test_missing_asset_exits_1(tmp_path):
    result = run("eval", "sweep", "--assets", tmp_path, "--out", tmp_path / "r")
    assert result.exit_code == 1
    assert "photo_stack.npz" in result.output
