"""Secondary acceptance: studio-exported parameter sets replay byte-identically
through the CLI, and the zero-slider state shows the exaggeration identity.

The exported command line is produced by the BUILT frontend (dist/state.js,
executed through node), so this exercises the real UI contract. Skipped
entirely when the studio build is absent; the primary suite never depends on it.
"""

import json
import shlex
import subprocess
import time

import pytest
import torch
from click.testing import CliRunner
from fastapi.testclient import TestClient

from carikit.cli import main
from carikit.config import load_config
from carikit.exaggeration import load_carigan
from carikit.imageio import encode_png
from carikit.service import ServiceAssets, ServiceState, create_app
from carikit.synthesis import load_stack, sample_codes, zero_noise


@pytest.fixture(scope="module")
def studio_dist(request):
    dist = request.config.rootpath / "frontend" / "dist"
    if not (dist / "state.js").exists():
        pytest.skip("studio build absent (frontend/dist); run `npm run build` in frontend/")
    return dist


@pytest.fixture(scope="module")
def service_env(reference_dir, studio_dist, tmp_path_factory, request):
    cfg = load_config(request.config.rootpath / "configs" / "desk32.yaml",
                      {"inversion.stage1_steps": 30, "inversion.stage2_steps": 30})
    work = tmp_path_factory.mktemp("studio-work")
    assets = ServiceAssets.load(reference_dir)
    state = ServiceState(assets, cfg, work, studio_dir=studio_dist)
    return {"state": state, "work": work, "reference": reference_dir, "dist": studio_dist}


def export_cli_via_frontend(dist, params: dict) -> str:
    """Run the built state.js exportCli on a history entry's parameters."""
    script = (
        "import(process.argv[1]).then(m => {"
        "  const p = JSON.parse(process.argv[2]);"
        "  console.log(m.exportCli({latentId: p.latent_id, styleId: p.style_id,"
        "                           alphas: p.alphas, edits: p.edits}));"
        "});"
    )
    out = subprocess.run(
        ["node", "-e", script, str(dist / "state.js"), json.dumps(params)],
        capture_output=True, text=True, check=True)
    return out.stdout.strip()


def replay_via_cli(exported: str, env, out_path) -> bytes:
    tokens = shlex.split(exported)
    assert tokens[:2] == ["carikit", "generate"]
    substitutions = {
        "<model>": str(env["reference"] / "p2c.npz"),
        "<store>": str(env["state"].latent_dir),
        "<bank>": str(env["work"] / "styles"),
        "<directions>": str(env["reference"] / "directions"),
        "replay.png": str(out_path),
    }
    args = [substitutions.get(t, t) for t in tokens[1:]]
    result = CliRunner().invoke(main, args)
    assert result.exit_code == 0, result.output
    return out_path.read_bytes()


def _wait_for_latent(client, job_id):
    for _ in range(600):
        record = client.get(f"/jobs/{job_id}").json()
        if record["status"] in ("done", "failed"):
            assert record["status"] == "done", record
            return record["latent_id"]
        time.sleep(0.1)
    raise AssertionError("inversion did not finish")


def test_studio_history_replays_byte_identical(service_env, tmp_path):
    env = service_env
    state = env["state"]
    photo = state.assets.photo
    app = create_app(state)
    with TestClient(app) as client:
        # studio build is served
        page = client.get("/studio/")
        assert page.status_code == 200
        assert b"caricature studio" in page.content

        # upload a photo (synthesized, so inversion converges quickly)
        code = sample_codes(photo, 1, torch.Generator().manual_seed(400))
        with torch.no_grad():
            img, _ = photo.synthesize(code, zero_noise(photo.n_scales))
        upload = encode_png(img)
        job_id = client.post("/invert", files={"file": ("photo.png", upload, "image/png")}).json()["job_id"]
        latent_id = _wait_for_latent(client, job_id)

        # curate styles so the session can pick one
        style_ids = client.post("/styles/curate", json={"n": 2, "psi": 0.7, "seed": 9}).json()["ids"]

        # a session history: slider states the UI would issue (4 sliders, [0,1])
        history = [
            {"latent_id": latent_id, "style_id": None, "alphas": [0, 0, 0, 0], "edits": []},
            {"latent_id": latent_id, "style_id": None, "alphas": [1, 0.5, 0, 0], "edits": []},
            {"latent_id": latent_id, "style_id": style_ids[0], "alphas": [0.75, 0.25, 0, 0],
             "edits": [["expression", 0.6]]},
        ]
        responses = []
        for params in history:
            resp = client.post("/caricature", json=params)
            assert resp.status_code == 200
            responses.append(resp.content)

        # every history entry replays byte-identically through the CLI
        for i, (params, served) in enumerate(zip(history, responses)):
            exported = export_cli_via_frontend(env["dist"], params)
            replayed = replay_via_cli(exported, env, tmp_path / f"replay_{i}.png")
            assert replayed == served, f"history entry {i} replay differs"

        # sliders at 0 display the alpha=0 identity image (plain mixed stack)
        from carikit.inversion import load_inversion

        result = load_inversion(state.latent_path(latent_id))
        model = load_carigan(env["reference"] / "p2c.npz")
        with torch.no_grad():
            plain, _ = model.stack.synthesize(result.code, result.noise)
        assert responses[0] == encode_png(plain)
    print("\nACCEPTANCE 11 PASS — studio exports replay byte-identically; zero sliders show the identity image")
