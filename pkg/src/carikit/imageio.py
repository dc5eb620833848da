"""Image conversion helpers: tensors in [-1, 1] <-> PNG bytes / files.

Outputs are always lossless PNG so service responses replay bit-exactly
through the CLI; uploads may be any Pillow-decodable format.
"""

from __future__ import annotations

import io

import numpy as np
import torch
from PIL import Image


def tensor_to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3,H,W) or (B,3,H,W) in [-1,1] -> (H,W,3) uint8 (first batch element)."""
    if img.dim() == 4:
        img = img[0]
    arr = ((img.detach().clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def uint8_to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr.astype(np.float32)).permute(2, 0, 1) / 127.5 - 1


def encode_png(img: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(tensor_to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> torch.Tensor:
    with Image.open(io.BytesIO(data)) as im:
        return uint8_to_tensor(np.asarray(im.convert("RGB")))


def save_image(path, img: torch.Tensor) -> None:
    Image.fromarray(tensor_to_uint8(img)).save(path, format="PNG")


def load_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        return uint8_to_tensor(np.asarray(im.convert("RGB")))


def center_crop_resize(img: torch.Tensor, size: int) -> torch.Tensor:
    """Square center crop then nearest-neighbor resize; inputs are assumed
    pre-aligned, this only normalizes framing."""
    _, h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    img = img[:, top:top + side, left:left + side]
    arr = Image.fromarray(tensor_to_uint8(img)).resize((size, size), Image.NEAREST)
    return uint8_to_tensor(np.asarray(arr))


def resize(img: torch.Tensor, size: int) -> torch.Tensor:
    arr = Image.fromarray(tensor_to_uint8(img)).resize((size, size), Image.NEAREST)
    return uint8_to_tensor(np.asarray(arr))


def image_grid(images: list[torch.Tensor], ncol: int) -> torch.Tensor:
    """Tile images (each (3,H,W) or (1,3,H,W)) into one (3, H*rows, W*ncol) image."""
    tiles = [img[0] if img.dim() == 4 else img for img in images]
    h, w = tiles[0].shape[-2:]
    rows = -(-len(tiles) // ncol)
    canvas = torch.ones(3, rows * h, ncol * w)
    for i, t in enumerate(tiles):
        r, c = divmod(i, ncol)
        canvas[:, r * h:(r + 1) * h, c * w:(c + 1) * w] = t
    return canvas
