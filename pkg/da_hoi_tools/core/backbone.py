# -----------------------------------------------------------------------------
# Copyright (C) 2025-2026, DA-HOI Tools contributors
# This file is part of DA-HOI Tools.
#
# DA-HOI Tools is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 2 of the License, or
# (at your option) any later version.
#
# DA-HOI Tools is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with DA-HOI Tools.  If not, see <https://www.gnu.org/licenses/>.
# -----------------------------------------------------------------------------

#! python3  # noqa: E265

"""
Visual encoder interface, ROIAlign pooling and interaction-feature construction.

Feature cell ``(i, j)`` of a map with stride ``s`` is centred on pixel
``((j + 0.5) * s, (i + 0.5) * s)``.
"""

# standard
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

# 3rd party
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn
from torchvision.ops import roi_align as tv_roi_align

# package
from da_hoi_tools.core.errors import HoiIOError, InvalidInputError, OutOfBoundsError, ShapeError
from da_hoi_tools.core.geometry import BBox
from da_hoi_tools.toolbelt.file_utils import write_atomic_bytes
from da_hoi_tools.toolbelt.log_handler import PlgLogger
from da_hoi_tools.toolbelt.preferences import PlgOptionsManager

ROI_SAMPLING_RATIO = 2
DEFAULT_POOL_SIZE = 2


@dataclass(frozen=True)
class FeatureMap:
    """Encoder output for one image.

    :param grid: tensor of shape (H_f, W_f, d)
    :param stride: pixels per grid cell
    :param image_size: (width, height) of the source image
    """

    grid: torch.Tensor
    stride: int
    image_size: tuple[int, int]

    def __post_init__(self):
        if self.grid.dim() != 3 or min(self.grid.shape) < 1:
            raise ShapeError(f"Feature grid must be (H_f, W_f, d) with positive sizes, got {tuple(self.grid.shape)}")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def dim(self) -> int:
        return self.grid.shape[2]

    def cells(self) -> torch.Tensor:
        """Grid cells flattened row-major, shape (H_f * W_f, d)."""
        return self.grid.reshape(-1, self.dim)


@runtime_checkable
class VisualEncoder(Protocol):
    """What the pipeline needs from a visual encoder."""

    stride: int
    dim: int

    def encode(self, image: np.ndarray) -> FeatureMap: ...


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 or float array -> (3, H, W) float32 tensor in [0, 1]."""
    array = np.asarray(image)
    if array.ndim == 2:
        array = np.repeat(array[:, :, None], 3, axis=2)
    if array.ndim != 3 or array.shape[0] == 0 or array.shape[1] == 0:
        raise InvalidInputError(f"Image must be a non-empty (H, W, C) array, got shape {array.shape}")
    if array.dtype == np.uint8:
        array = array.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(array[:, :, :3], dtype=np.float32)).permute(2, 0, 1)


def read_image(path: str | Path) -> np.ndarray:
    """Read an image file as an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as img:
            return np.array(img.convert("RGB"))
    except OSError as err:
        raise HoiIOError(f"Cannot read image {path}: {err}") from err


class ToyPatchEncoder(nn.Module):
    """Frozen linear projection of non-overlapping square patches.

    Weights are drawn from a dedicated generator so that the encoder is identical across
    processes for a given seed. Images whose sides are not a multiple of the stride are
    padded by edge replication.

    :param dim: output feature dimension
    :type dim: int
    :param stride: patch size in pixels
    :type stride: int
    :param seed: weight seed
    :type seed: int
    """

    def __init__(self, dim: int = 64, stride: int = 8, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.stride = stride
        self.seed = seed
        self.proj = nn.Conv2d(3, dim, kernel_size=stride, stride=stride)
        generator = torch.Generator().manual_seed(seed)
        fan_in = 3 * stride * stride
        with torch.no_grad():
            self.proj.weight.copy_(torch.randn(self.proj.weight.shape, generator=generator) / fan_in**0.5)
            self.proj.bias.copy_(torch.randn(self.proj.bias.shape, generator=generator) * 0.1)
        self.requires_grad_(False)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        """(3, H, W) -> (H_f, W_f, d)"""
        _, height, width = pixels.shape
        pad_h = (-height) % self.stride
        pad_w = (-width) % self.stride
        x = pixels.unsqueeze(0)
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        return self.proj(x)[0].permute(1, 2, 0)

    def encode(self, image: np.ndarray) -> FeatureMap:
        """Encode an image.

        :param image: (H, W, 3) array, uint8 or float in [0, 1]
        :type image: np.ndarray
        :raises InvalidInputError: empty image or a side shorter than the stride
        :return: feature map
        :rtype: FeatureMap
        """
        pixels = image_to_tensor(image)
        _, height, width = pixels.shape
        if height < self.stride or width < self.stride:
            raise InvalidInputError(f"Image {width}x{height} is smaller than one stride ({self.stride} px)")
        trainable = any(p.requires_grad for p in self.parameters())
        with torch.set_grad_enabled(trainable and torch.is_grad_enabled()):
            grid = self.forward(pixels)
        return FeatureMap(grid=grid, stride=self.stride, image_size=(width, height))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode("UTF-8"))
            digest.update(tensor.detach().cpu().numpy().astype("<f4").tobytes())
        return digest.hexdigest()


class FeatureCache:
    """On-disk cache of encoder feature maps, one ``.npy`` file per (encoder, image).

    :param directory: cache directory, created on first write
    :type directory: Path
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.log = PlgLogger().log

    @classmethod
    def from_settings(cls) -> "FeatureCache | None":
        cache_dir = PlgOptionsManager.get_cache_dir()
        return cls(cache_dir) if cache_dir else None

    @staticmethod
    def key(encoder: ToyPatchEncoder, image: np.ndarray) -> str:
        array = np.ascontiguousarray(image)
        digest = hashlib.sha256(encoder.fingerprint().encode("ascii"))
        digest.update(str((array.shape, array.dtype.str)).encode("ascii"))
        digest.update(array.tobytes())
        return digest.hexdigest()

    def encode(self, encoder: ToyPatchEncoder, image: np.ndarray) -> FeatureMap:
        """Encode through the cache. Trainable encoders bypass it."""
        if any(p.requires_grad for p in encoder.parameters()):
            return encoder.encode(image)
        path = self.directory / f"{self.key(encoder, image)}.npy"
        height, width = np.asarray(image).shape[:2]
        if path.is_file():
            try:
                grid = torch.from_numpy(np.load(path))
                return FeatureMap(grid=grid, stride=encoder.stride, image_size=(width, height))
            except (OSError, ValueError, ShapeError):
                self.log(message=f"Ignoring unreadable cache entry {path.name}", log_level=1)
        fmap = encoder.encode(image)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            buffer = io.BytesIO()
            np.save(buffer, fmap.grid.detach().cpu().numpy())
            write_atomic_bytes(path, buffer.getvalue())
        except (OSError, HoiIOError) as err:
            self.log(message=f"Feature cache write failed: {err}", log_level=1)
        return fmap


def _box_rows(boxes: list[BBox]) -> torch.Tensor:
    return torch.tensor([[0.0, *b.corners] for b in boxes], dtype=torch.float64)


def roi_align_many(f_img: FeatureMap, boxes: list[BBox], pool_size: int = DEFAULT_POOL_SIZE) -> torch.Tensor:
    """ROIAlign of several boxes on one feature map.

    :param f_img: feature map
    :type f_img: FeatureMap
    :param boxes: boxes in image pixels
    :type boxes: list[BBox]
    :param pool_size: output grid size P
    :type pool_size: int
    :raises OutOfBoundsError: a box does not intersect the image
    :return: tensor of shape (N, P, P, d)
    :rtype: torch.Tensor
    """
    if pool_size < 1:
        raise ShapeError(f"Pool size must be >= 1, got {pool_size}")
    width, height = f_img.image_size
    for box in boxes:
        if not box.intersects_image(width, height):
            raise OutOfBoundsError(f"Box {box.to_list()} lies outside the {width}x{height} image")
    if not boxes:
        return f_img.grid.new_zeros((0, pool_size, pool_size, f_img.dim))
    features = f_img.grid.permute(2, 0, 1).unsqueeze(0)
    rois = _box_rows(boxes).to(features.dtype)
    pooled = tv_roi_align(
        features,
        rois,
        output_size=pool_size,
        spatial_scale=1.0 / f_img.stride,
        sampling_ratio=ROI_SAMPLING_RATIO,
        aligned=True,
    )
    return pooled.permute(0, 2, 3, 1)


def roi_align(f_img: FeatureMap, box: BBox, pool_size: int = DEFAULT_POOL_SIZE) -> torch.Tensor:
    """ROIAlign of a single box, shape (P, P, d).

    Every output cell averages 2x2 bilinear samples inside its bin, box coordinates are
    not quantized.
    """
    return roi_align_many(f_img, [box], pool_size)[0]


def build_interaction_feature(f_h: torch.Tensor, f_o: torch.Tensor) -> torch.Tensor:
    """Concatenate pooled human and object features along the cell axis.

    :param f_h: human pooled feature, (P, P, d) or (N, P, P, d)
    :type f_h: torch.Tensor
    :param f_o: object pooled feature, same shape
    :type f_o: torch.Tensor
    :raises ShapeError: shapes differ
    :return: (2 * P * P, d) tokens, human cells row-major first, or (N, 2 * P * P, d)
    :rtype: torch.Tensor
    """
    if f_h.shape != f_o.shape or f_h.dim() not in (3, 4):
        raise ShapeError(f"Pooled features must share a (P, P, d) shape, got {tuple(f_h.shape)} and {tuple(f_o.shape)}")
    if f_h.dim() == 3:
        return torch.cat([f_h.reshape(-1, f_h.shape[-1]), f_o.reshape(-1, f_o.shape[-1])], dim=0)
    n, dim = f_h.shape[0], f_h.shape[-1]
    return torch.cat([f_h.reshape(n, -1, dim), f_o.reshape(n, -1, dim)], dim=1)
