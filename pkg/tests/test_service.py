import time

import pytest
import torch
from fastapi.testclient import TestClient

from carikit.config import Config, InversionConfig, ServiceConfig, config_from_dict
from carikit.exaggeration import build_carigan
from carikit.imageio import decode_image, encode_png, tensor_to_uint8
from carikit.manipulation import EditDirection
from carikit.mixing import build_p2c
from carikit.service import ServiceAssets, ServiceState, create_app
from carikit.synthesis import random_noise, sample_codes, zero_noise


@pytest.fixture(scope="module")
def assets(photo_stack, cari_stack):
    torch.manual_seed(55)
    p2c = build_carigan(build_p2c(photo_stack, cari_stack, 2), "p2c")
    for block in p2c.blocks.blocks:
        torch.nn.init.normal_(block.conv2.weight, std=0.05)
    direction = EditDirection("expression", torch.randn(photo_stack.cfg.d_w,
                                                        generator=torch.Generator().manual_seed(5)))
    direction.vector /= direction.vector.norm()
    return ServiceAssets(photo=photo_stack, cari=cari_stack, p2c=p2c,
                         directions={"expression": direction})


@pytest.fixture()
def state(assets, tmp_path):
    cfg = config_from_dict({
        "model": {"d_z": 16, "d_w": 16, "channels": [24, 16, 12, 8], "mapping_layers": 2},
        "inversion": {"stage1_steps": 4, "stage2_steps": 4},
        "service": {"queue_size": 4, "workers": 1, "max_upload_bytes": 100_000},
    })
    return ServiceState(assets, cfg, tmp_path / "work")


def _upload_png(photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(9))
    img, _ = photo_stack.synthesize(code, zero_noise(photo_stack.n_scales))
    return encode_png(img)


def test_invert_job_lifecycle(state, photo_stack):
    with TestClient(create_app(state)) as client:
        data = _upload_png(photo_stack)
        resp = client.post("/invert", files={"file": ("photo.png", data, "image/png")})
        assert resp.status_code == 202
        job_id = resp.json()["job_id"]
        for _ in range(200):
            record = client.get(f"/jobs/{job_id}").json()
            if record["status"] in ("done", "failed"):
                break
            time.sleep(0.05)
        assert record["status"] == "done"
        latent_id = record["latent_id"]
        gen = client.post("/caricature", json={"latent_id": latent_id, "alphas": [0, 0]})
        assert gen.status_code == 200
        assert gen.headers["content-type"] == "image/png"
        # idempotent re-upload resolves instantly to the same latent
        resp2 = client.post("/invert", files={"file": ("photo.png", data, "image/png")})
        record2 = client.get(f"/jobs/{resp2.json()['job_id']}").json()
        assert record2["status"] == "done"
        assert record2["latent_id"] == latent_id


def test_invert_rejects_garbage_and_oversize(state, photo_stack):
    with TestClient(create_app(state)) as client:
        resp = client.post("/invert", files={"file": ("x.png", b"not an image", "image/png")})
        assert resp.status_code == 400
        big = b"\x00" * 200_000
        resp = client.post("/invert", files={"file": ("x.png", big, "image/png")})
        assert resp.status_code == 413


def test_invert_queue_full_503(assets, tmp_path, photo_stack):
    cfg = config_from_dict({
        "model": {"d_z": 16, "d_w": 16, "channels": [24, 16, 12, 8], "mapping_layers": 2},
        "service": {"queue_size": 1, "workers": 1},
    })
    state = ServiceState(assets, cfg, tmp_path / "work")
    client = TestClient(create_app(state))  # no context manager: workers never start
    a = _upload_png(photo_stack)
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(10))
    img, _ = photo_stack.synthesize(code, zero_noise(photo_stack.n_scales))
    b = encode_png(img)
    assert client.post("/invert", files={"file": ("a.png", a, "image/png")}).status_code == 202
    resp = client.post("/invert", files={"file": ("b.png", b, "image/png")})
    assert resp.status_code == 503


def test_caricature_alpha_zero_equals_plain_mixed(state, assets, photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(11))[0]
    with TestClient(create_app(state)) as client:
        resp = client.post("/caricature", json={"code": code.tolist(), "alphas": [0, 0]})
        assert resp.status_code == 200
        with torch.no_grad():
            plain, _ = assets.p2c.stack.synthesize(code, zero_noise(photo_stack.n_scales))
        got = decode_image(resp.content)
        assert (tensor_to_uint8(got) == tensor_to_uint8(plain)).all()


def test_caricature_deterministic_replay(state, photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(12))[0]
    req = {"code": code.tolist(), "alphas": [1, 0.5], "noise_seed": 7,
           "edits": [["expression", 0.4]]}
    with TestClient(create_app(state)) as client:
        a = client.post("/caricature", json=req)
        b = client.post("/caricature", json=req)
        assert a.content == b.content


def test_caricature_alpha_padding_and_truncation(state, photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(13))[0]
    with TestClient(create_app(state)) as client:
        # 4 provided, model has 2 blocks: truncated; 1 provided: padded with 0
        long = client.post("/caricature", json={"code": code.tolist(), "alphas": [1, 1, 1, 1]})
        two = client.post("/caricature", json={"code": code.tolist(), "alphas": [1, 1]})
        assert long.content == two.content
        short = client.post("/caricature", json={"code": code.tolist(), "alphas": [1]})
        padded = client.post("/caricature", json={"code": code.tolist(), "alphas": [1, 0]})
        assert short.content == padded.content


def test_caricature_error_codes(state, photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(14))[0]
    with TestClient(create_app(state)) as client:
        assert client.post("/caricature", json={"latent_id": "nope", "alphas": []}).status_code == 404
        assert client.post("/caricature", json={"code": code.tolist(), "style_id": "nope"}).status_code == 404
        assert client.post("/caricature",
                           json={"code": code.tolist(), "edits": [["unknown", 1.0]]}).status_code == 404
        assert client.post("/caricature",
                           json={"code": code.tolist(), "alphas": [1e30, 0]}).status_code == 422
        assert client.post("/caricature", json={"alphas": [0, 0]}).status_code == 422
        assert client.post("/caricature", json={"code": [[0.0]], "alphas": []}).status_code == 422
        assert client.post("/caricature",
                           json={"code": code.tolist(), "edits": [["expression", 99.0]]}).status_code == 422


def test_caricature_output_size(state, photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(15))[0]
    with TestClient(create_app(state)) as client:
        resp = client.post("/caricature", json={"code": code.tolist(), "output_size": 64})
        img = decode_image(resp.content)
        assert img.shape == (3, 64, 64)


def test_style_bank_endpoints(state, assets):
    with TestClient(create_app(state)) as client:
        resp = client.post("/styles/curate", json={"n": 4, "psi": 0.7, "seed": 3})
        ids = resp.json()["ids"]
        assert len(ids) == 4
        listing = client.get("/styles").json()["styles"]
        assert [e["id"] for e in listing] == ids
        thumb = client.get(f"/styles/{ids[0]}/thumbnail")
        assert thumb.status_code == 200
        # thumbnail replays from the stored code (zero noise, deterministic)
        entry = state.bank.get(ids[0])
        with torch.no_grad():
            img, _ = assets.cari.synthesize(entry.code, zero_noise(assets.cari.n_scales))
        assert thumb.content == encode_png(img)
        assert client.delete(f"/styles/{ids[0]}").status_code == 200
        remaining = [e["id"] for e in client.get("/styles").json()["styles"]]
        assert ids[0] not in remaining
        assert client.delete(f"/styles/{ids[0]}").status_code == 404
        # style selection changes the render
        code = sample_codes(assets.photo, 1, torch.Generator().manual_seed(16))[0]
        plain = client.post("/caricature", json={"code": code.tolist()})
        styled = client.post("/caricature", json={"code": code.tolist(), "style_id": ids[1]})
        assert plain.content != styled.content


def test_meta_endpoint(state):
    with TestClient(create_app(state)) as client:
        meta = client.get("/meta").json()
        assert meta["blocks"] == 2
        assert meta["resolution"] == 32
        assert meta["directions"] == ["expression"]


def test_unknown_job_404(state):
    with TestClient(create_app(state)) as client:
        assert client.get("/jobs/nope").status_code == 404
