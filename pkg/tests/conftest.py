import pytest
import torch

from carikit.config import Config, DataConfig, ModelConfig, PerceptionConfig
from carikit.synthesis import SynthesisStack

REFERENCE_DIR_NAME = "assets/reference"


def tiny_model_cfg() -> ModelConfig:
    return ModelConfig(d_z=16, d_w=16, n_scales=4, channels=(24, 16, 12, 8), mapping_layers=2)


@pytest.fixture(scope="session")
def model_cfg() -> ModelConfig:
    return tiny_model_cfg()


@pytest.fixture(scope="session")
def photo_stack(model_cfg) -> SynthesisStack:
    torch.manual_seed(100)
    stack = SynthesisStack(model_cfg, "photo")
    stack.estimate_mean_w(10_000, seed=0)
    return stack.eval()


@pytest.fixture(scope="session")
def cari_stack(model_cfg) -> SynthesisStack:
    torch.manual_seed(200)
    stack = SynthesisStack(model_cfg, "caricature")
    stack.estimate_mean_w(10_000, seed=0)
    return stack.eval()


@pytest.fixture(scope="session")
def data_cfg() -> DataConfig:
    return DataConfig(n_attributes=12)


@pytest.fixture(scope="session")
def perception_cfg() -> PerceptionConfig:
    return PerceptionConfig(n_attributes=12, width=16, embed_dim=16, epochs=2)


@pytest.fixture(scope="session")
def reference_dir(request):
    """Committed desk-scale reference assets (trained stacks, classifiers, blocks)."""
    root = request.config.rootpath / REFERENCE_DIR_NAME
    if not (root / "photo_stack.npz").exists():
        pytest.skip(f"reference assets missing; run scripts/build_reference.py (expected at {root})")
    return root


def fd_grad(fn, tensor: torch.Tensor, indices, h: float = 1e-5):
    """Central finite differences of a scalar fn w.r.t. selected flat indices."""
    flat = tensor.detach().reshape(-1)
    grads = []
    for idx in indices:
        orig = flat[idx].item()
        flat[idx] = orig + h
        up = float(fn())
        flat[idx] = orig - h
        down = float(fn())
        flat[idx] = orig
        grads.append((up - down) / (2 * h))
    return torch.tensor(grads, dtype=tensor.dtype)


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = b.abs().max().clamp(min=1e-12)
    return float((a - b).abs().max() / denom)
