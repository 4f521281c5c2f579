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

"""
Shared fixtures: a small toy world, a tiny model and a stub language-model backend.
"""

# 3rd party
import pytest
import torch

# package
from da_hoi_tools.core.backbone import FeatureMap
from da_hoi_tools.core.backends import StubBackend
from da_hoi_tools.core.checkpoint import new_checkpoint
from da_hoi_tools.core.model import ModelConfig
from da_hoi_tools.core.prompts import template_texts
from da_hoi_tools.core.tokenizer import Tokenizer
from da_hoi_tools.core.toyworld import ToySceneSpec, default_toy_taxonomy, generate
from da_hoi_tools.toolbelt.preferences import PlgOptionsManager

TINY_MODEL = {
    "feature_dim": 8,
    "stride": 8,
    "sap_dim": 8,
    "sap_heads": 2,
    "lm_dim": 8,
    "lm_layers": 1,
    "lm_heads": 2,
    "lowrank_rank": 2,
    "lowrank_alpha": 4.0,
}


@pytest.fixture(autouse=True)
def reset_settings():
    """Every test starts from default settings and leaves no override behind."""
    PlgOptionsManager.reset()
    yield
    PlgOptionsManager.reset()


@pytest.fixture()
def toy_taxonomy():
    return default_toy_taxonomy()


@pytest.fixture()
def tiny_config():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture()
def checkpoint(toy_taxonomy, tiny_config):
    """Freshly initialized checkpoint of the tiny model."""
    return new_checkpoint(toy_taxonomy, tiny_config)


@pytest.fixture(scope="session")
def toy_world():
    """Six exact-box scenes with one human each on a 64x64 canvas."""
    spec = ToySceneSpec(width=64, height=64, min_humans=1, max_humans=1, seed=7)
    return generate(spec, 6)


@pytest.fixture()
def tokenizer(toy_taxonomy):
    return Tokenizer.build(template_texts() + toy_taxonomy.phrases())


@pytest.fixture()
def stub_backend(tokenizer):
    return StubBackend(tokenizer, dim=8)


@pytest.fixture()
def feature_map():
    """4x4 grid of 2-d features for a 32x32 image, cell (r, c) holds (r, c)."""
    rows, cols = torch.meshgrid(torch.arange(4.0), torch.arange(4.0), indexing="ij")
    return FeatureMap(grid=torch.stack([rows, cols], dim=-1), stride=8, image_size=(32, 32))


def pytest_collection_modifyitems(session, config, items):
    """Modify the order of collected tests to run unit tests first, then integration, then e2e.

    This hook reorders test items based on their location in the test directory structure:
    - tests/unit/ → executed first
    - tests/integration/ → executed second
    - tests/e2e/ → executed last

    Also applies appropriate markers to each test based on its location.
    """
    unit = []
    integration = []
    e2e = []
    other = []

    for item in items:
        test_path = str(item.fspath).replace("\\", "/")

        if "/tests/unit/" in test_path:
            item.add_marker(pytest.mark.unit)
            unit.append(item)
        elif "/tests/integration/" in test_path:
            item.add_marker(pytest.mark.integration)
            integration.append(item)
        elif "/tests/e2e/" in test_path:
            item.add_marker(pytest.mark.e2e)
            e2e.append(item)
        else:
            other.append(item)

    items[:] = unit + integration + e2e + other
