# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""Tests for the utils module."""

import json
from pathlib import Path

import numpy as np
import pytest

from packages.valory.skills.joint_stem_seg.metrics import GroundTruthStem
from packages.valory.skills.joint_stem_seg.stem_extraction import StemClass
from packages.valory.skills.joint_stem_seg.utils import (
    DataclassEncoder,
    atomic_write_bytes,
    atomic_write_npy,
    atomic_write_text,
    to_json,
)


class TestDataclassEncoder:
    """Tests for DataclassEncoder."""

    def test_encode_dataclass_with_enum(self) -> None:
        """Dataclasses expand and enums become their values."""
        stem = GroundTruthStem(StemClass.DICOT, 3.5, 4.0)
        parsed = json.loads(json.dumps(stem, cls=DataclassEncoder))
        assert parsed == {"stem_class": StemClass.DICOT.value, "x": 3.5, "y": 4.0}

    def test_encode_numpy(self) -> None:
        """Numpy scalars and arrays become plain numbers and lists."""
        parsed = json.loads(
            json.dumps(
                {"n": np.int64(3), "f": np.float32(0.5), "a": np.arange(3)},
                cls=DataclassEncoder,
            )
        )
        assert parsed == {"n": 3, "f": 0.5, "a": [0, 1, 2]}

    def test_encode_path_and_set(self) -> None:
        """Paths become strings and sets sorted lists."""
        assert to_json({"p": Path("a/b"), "s": {3, 1}}) == '{"p": "a/b", "s": [1, 3]}'

    def test_encode_non_dataclass_fallback(self) -> None:
        """Unsupported objects raise TypeError."""
        with pytest.raises(TypeError):
            DataclassEncoder().default(object())

    def test_encode_dataclass_type(self) -> None:
        """A dataclass type is not an instance to expand."""
        with pytest.raises(TypeError):
            DataclassEncoder().default(GroundTruthStem)

    def test_keys_sorted(self) -> None:
        """Serialization is deterministic."""
        assert to_json({"b": 1, "a": 2}) == '{"a": 2, "b": 1}'


class TestAtomicWrite:
    """Tests for the atomic writers."""

    def test_creates_parents(self, tmp_path: Path) -> None:
        """Missing parent folders are created."""
        target = tmp_path / "a" / "b" / "c.txt"
        atomic_write_text(target, "héllo")
        assert target.read_text(encoding="utf-8") == "héllo"

    def test_replaces_and_leaves_no_temp(self, tmp_path: Path) -> None:
        """The target is replaced and no temporary sibling remains."""
        target = tmp_path / "x.bin"
        atomic_write_bytes(target, b"old")
        atomic_write_bytes(target, b"new")
        assert target.read_bytes() == b"new"
        assert [p.name for p in tmp_path.iterdir()] == ["x.bin"]

    def test_failure_keeps_original(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        """A failed write leaves the previous content and cleans up."""
        target = tmp_path / "x.bin"
        atomic_write_bytes(target, b"old")

        def fail(*_: object) -> None:
            raise OSError("disk full")

        monkeypatch.setattr("packages.valory.skills.joint_stem_seg.utils.os.replace", fail)
        with pytest.raises(OSError, match="disk full"):
            atomic_write_bytes(target, b"new")
        assert target.read_bytes() == b"old"
        assert [p.name for p in tmp_path.iterdir()] == ["x.bin"]

    def test_npy_loads_back(self, tmp_path: Path) -> None:
        """An array written as `.npy` loads back bit-exact with its dtype."""
        target = tmp_path / "probs" / "img_plant_probs.npy"
        array = np.random.default_rng(0).random((3, 4, 5)).astype(np.float32)
        atomic_write_npy(target, array)
        loaded = np.load(target)
        assert loaded.dtype == np.float32
        np.testing.assert_array_equal(loaded, array)
        assert [p.name for p in target.parent.iterdir()] == ["img_plant_probs.npy"]

    def test_npy_failure_keeps_original(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """A failed `.npy` write leaves the previous array in place."""
        target = tmp_path / "a.npy"
        atomic_write_npy(target, np.zeros(2))

        def fail(*_: object) -> None:
            raise OSError("disk full")

        monkeypatch.setattr("packages.valory.skills.joint_stem_seg.utils.os.replace", fail)
        with pytest.raises(OSError, match="disk full"):
            atomic_write_npy(target, np.ones(2))
        np.testing.assert_array_equal(np.load(target), np.zeros(2))
        assert [p.name for p in tmp_path.iterdir()] == ["a.npy"]
