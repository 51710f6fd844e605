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

"""This module contains utility functions and classes for the joint stem segmentation skill."""

import io
import json
import os
import tempfile
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Union

import numpy as np

PathLike = Union[str, "os.PathLike[str]"]


class DataclassEncoder(json.JSONEncoder):
    """A custom JSON encoder for dataclasses, enums, paths and numpy values."""

    def default(self, o: Any) -> Any:
        """The default JSON encoder."""
        if is_dataclass(o) and not isinstance(o, type):
            return asdict(o)
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, Path):
            return str(o)
        if isinstance(o, (set, frozenset)):
            return sorted(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def to_json(obj: Any, **kwargs: Any) -> str:
    """Serialize an object deterministically, expanding dataclasses."""
    return json.dumps(obj, cls=DataclassEncoder, sort_keys=True, **kwargs)


def atomic_write_bytes(path: PathLike, content: bytes) -> None:
    """Write a file by writing a sibling temp file and renaming it over the target."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as tmp:
            tmp.write(content)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def atomic_write_text(path: PathLike, content: str) -> None:
    """Write a UTF-8 text file atomically."""
    atomic_write_bytes(path, content.encode("utf-8"))


def atomic_write_npy(path: PathLike, array: np.ndarray) -> None:
    """Write an array in `.npy` format atomically."""
    buffer = io.BytesIO()
    np.save(buffer, array)
    atomic_write_bytes(path, buffer.getvalue())
