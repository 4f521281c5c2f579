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
Checkpoint container.

A checkpoint is a directory holding ``manifest.json`` and one binary blob per key
(``encoder``, ``sap``, ``lm_base``, ``lm_lowrank``). A blob is the 8-byte magic ``DHOICKPT``,
a version byte, then every tensor as little-endian float32, row-major, in sorted name order.
The manifest records tensor names and shapes, content hashes, the configuration echo, the
vocabulary, the taxonomy and the training history.
"""

# standard
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

# 3rd party
import numpy as np
import torch

# package
from da_hoi_tools.core.errors import CompatibilityError, DependencyError, HoiIOError
from da_hoi_tools.core.model import BLOB_KEYS, HoiModel, ModelConfig
from da_hoi_tools.core.taxonomy import Taxonomy
from da_hoi_tools.core.tokenizer import Tokenizer
from da_hoi_tools.toolbelt.file_utils import read_json, write_atomic_bytes, write_atomic_json
from da_hoi_tools.toolbelt.log_handler import PlgLogger
from da_hoi_tools.toolbelt.preferences import dump_dataclass, load_dataclass

MAGIC = b"DHOICKPT"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def encode_blob(tensors: dict[str, torch.Tensor]) -> bytes:
    """Serialize tensors in sorted name order."""
    chunks = [MAGIC, bytes([FORMAT_VERSION])]
    for name in sorted(tensors):
        chunks.append(tensors[name].detach().cpu().numpy().astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(chunks)


def decode_blob(data: bytes, layout: list[dict[str, Any]]) -> dict[str, torch.Tensor]:
    """Inverse of :func:`encode_blob`, ``layout`` lists names and shapes in blob order.

    :raises CompatibilityError: bad magic, unknown version or size mismatch
    """
    header = len(MAGIC) + 1
    if data[: len(MAGIC)] != MAGIC:
        raise CompatibilityError("Not a checkpoint blob (bad magic)")
    if data[len(MAGIC)] != FORMAT_VERSION:
        raise CompatibilityError(f"Unsupported blob version {data[len(MAGIC)]}")
    values = np.frombuffer(data, dtype="<f4", offset=header)
    tensors = {}
    offset = 0
    for entry in layout:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + count > values.size:
            raise CompatibilityError(f"Blob is truncated at tensor {entry['name']}")
        tensors[entry["name"]] = torch.from_numpy(values[offset : offset + count].reshape(shape).astype(np.float32))
        offset += count
    if offset != values.size:
        raise CompatibilityError(f"Blob holds {values.size - offset} unexpected trailing values")
    return tensors


@dataclass
class Checkpoint:
    """A model bundle with its provenance."""

    model: HoiModel
    history: dict[str, list[dict[str, float]]] = field(default_factory=dict)
    train_configs: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def taxonomy(self) -> Taxonomy:
        return self.model.taxonomy

    def blob_bytes(self) -> dict[str, bytes]:
        return {key: encode_blob(tensors) for key, tensors in self.model.blob_tensors().items()}

    def blob_hashes(self) -> dict[str, str]:
        return {key: hashlib.sha256(data).hexdigest() for key, data in self.blob_bytes().items()}

    def manifest(self, blobs: dict[str, bytes] | None = None) -> dict[str, Any]:
        blobs = blobs or self.blob_bytes()
        tensors = self.model.blob_tensors()
        return {
            "format_version": FORMAT_VERSION,
            "model_config": dump_dataclass(self.model.config),
            "taxonomy": self.model.taxonomy.to_dict(),
            "taxonomy_sha256": self.model.taxonomy.fingerprint(),
            "vocabulary": self.model.tokenizer.to_list(),
            "train_configs": self.train_configs,
            "history": self.history,
            "blobs": {
                key: {
                    "file": f"{key}.bin",
                    "sha256": hashlib.sha256(blobs[key]).hexdigest(),
                    "tensors": [
                        {"name": name, "shape": list(tensors[key][name].shape)} for name in sorted(tensors[key])
                    ],
                }
                for key in BLOB_KEYS
            },
        }

    def check_taxonomy(self, taxonomy: Taxonomy) -> None:
        """Raise :class:`CompatibilityError` when ``taxonomy`` is not the one the model was built for."""
        if taxonomy.fingerprint() != self.model.taxonomy.fingerprint():
            raise CompatibilityError("Checkpoint was built for a different taxonomy")


def save_checkpoint(checkpoint: Checkpoint, directory: str | Path) -> Path:
    """Write the container, blobs first and manifest last.

    :return: checkpoint directory
    :rtype: Path
    """
    directory = Path(directory)
    blobs = checkpoint.blob_bytes()
    for key in BLOB_KEYS:
        write_atomic_bytes(directory / f"{key}.bin", blobs[key])
    write_atomic_json(directory / MANIFEST_NAME, checkpoint.manifest(blobs))
    PlgLogger.log(message=f"Checkpoint written to {directory}", log_level=3)
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """Read a checkpoint directory.

    :raises DependencyError: directory or manifest missing
    :raises CompatibilityError: hash mismatch or unreadable blob
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DependencyError(f"No checkpoint found at {directory}")
    manifest = read_json(manifest_path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"Unsupported checkpoint format {manifest.get('format_version')}")

    config = load_dataclass(ModelConfig, manifest["model_config"])
    taxonomy = Taxonomy.from_dict(manifest["taxonomy"])
    tokenizer = Tokenizer(manifest["vocabulary"])
    model = HoiModel(config, taxonomy, tokenizer=tokenizer)

    blobs = {}
    for key in BLOB_KEYS:
        entry = manifest["blobs"][key]
        try:
            data = (directory / entry["file"]).read_bytes()
        except OSError as err:
            raise HoiIOError(f"Cannot read checkpoint blob {key}: {err}") from err
        if hashlib.sha256(data).hexdigest() != entry["sha256"]:
            raise CompatibilityError(f"Checkpoint blob '{key}' does not match its recorded hash")
        blobs[key] = decode_blob(data, entry["tensors"])
    model.load_blob_tensors(blobs)
    return Checkpoint(
        model=model,
        history={k: list(v) for k, v in manifest.get("history", {}).items()},
        train_configs=dict(manifest.get("train_configs", {})),
    )


def new_checkpoint(taxonomy: Taxonomy, config: ModelConfig | None = None) -> Checkpoint:
    """Freshly initialized model, e.g. for the training-free path."""
    return Checkpoint(model=HoiModel(config or ModelConfig(), taxonomy))
