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
End-to-end tests of the toy dataset generation script.
"""

import json

from scripts.generate_toyworld import main


class TestGenerateToyworld:
    """Run the script as the command line would."""

    def test_dataset_with_split(self, tmp_path):
        """Test a small dataset with an unseen-verb split."""
        out = tmp_path / "toy"
        assert main(["--out", str(out), "--n-images", "3", "--seed", "2", "--split", "UV", "--hold-out", "1"]) == 0
        assert len(list((out / "images").glob("*.png"))) == 3
        assert len(json.loads((out / "gt.json").read_text(encoding="UTF-8"))["images"]) == 3
        assert json.loads((out / "split.json").read_text(encoding="UTF-8"))["setting"] == "UV"

    def test_spec_file(self, tmp_path):
        """Test the scene settings come from a JSON file."""
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"width": 64, "height": 48, "max_humans": 1}), encoding="UTF-8")
        out = tmp_path / "toy"
        assert main(["--out", str(out), "--n-images", "1", "--spec", str(spec)]) == 0
        assert json.loads((out / "gt.json").read_text(encoding="UTF-8"))["images"][0]["width"] == 64

    def test_invalid_spec(self, tmp_path):
        """Test an invalid spec fails with exit code 1."""
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"paint_prob": 2.0}), encoding="UTF-8")
        assert main(["--out", str(tmp_path / "toy"), "--spec", str(spec)]) == 1

    def test_geometric(self, tmp_path):
        """Test the geometric preset writes no painting labels."""
        out = tmp_path / "toy"
        assert main(["--out", str(out), "--n-images", "12", "--seed", "4", "--geometric"]) == 0
        verbs = {v["gerund"]: v["id"] for v in json.loads((out / "taxonomy.json").read_text(encoding="UTF-8"))["verbs"]}
        images = json.loads((out / "gt.json").read_text(encoding="UTF-8"))["images"]
        assert all(t["verb_id"] != verbs["painting"] for image in images for t in image["triplets"])
