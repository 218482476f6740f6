"""Named parameter storage and the flat checkpoint archive."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import ConfigError, FormatError
from .tensor import Tensor

MANIFEST = "manifest.json"
ARCHIVE_VERSION = 1
# fixed zip member timestamp so identical parameters give identical bytes
_ZIP_DATE = (2000, 1, 1, 0, 0, 0)


class ParameterSet:
    """Ordered ``name -> Tensor`` map with per-name trainable flags."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)
        self._tensors[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_names(self) -> list[str]:
        return [n for n, flag in self._trainable.items() if flag]

    def set_trainable(self, name: str, flag: bool) -> None:
        self[name].requires_grad = flag
        self._trainable[name] = flag

    def freeze(self, prefixes: Iterable[str]) -> list[str]:
        """Freeze every parameter whose name starts with one of ``prefixes``."""
        prefixes = tuple(prefixes)
        hit = [n for n in self._tensors if n.startswith(prefixes)] if prefixes else []
        for n in hit:
            self.set_trainable(n, False)
        return hit

    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    # value snapshots -------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, value in state.items():
            t = self[n]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.shape:
                raise ConfigError(f"shape mismatch for {n}: {value.shape} vs {t.shape}")
            t.data = value.copy()

    def copy(self) -> "ParameterSet":
        other = ParameterSet()
        for n, t in self._tensors.items():
            other.add(n, t.data, self._trainable[n])
        return other

    # archive ---------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the flat archive: manifest plus one little-endian f32 payload per name."""
        manifest = {
            "version": ARCHIVE_VERSION,
            "dtype": "<f4",
            "parameters": [
                {"name": n, "shape": list(t.shape), "trainable": self._trainable[n]}
                for n, t in self._tensors.items()
            ],
        }
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr(zipfile.ZipInfo(MANIFEST, _ZIP_DATE), json.dumps(manifest, indent=1))
            for n, t in self._tensors.items():
                payload = t.data.astype("<f4").tobytes()
                zf.writestr(zipfile.ZipInfo(f"{n}.f32", _ZIP_DATE), payload)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "ParameterSet":
        try:
            zf = zipfile.ZipFile(path)
        except (OSError, zipfile.BadZipFile) as exc:
            raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
        with zf:
            manifest = json.loads(zf.read(MANIFEST))
            out = cls()
            for entry in manifest["parameters"]:
                raw = zf.read(f"{entry['name']}.f32")
                shape = tuple(entry["shape"])
                values = np.frombuffer(raw, dtype="<f4")
                if values.size != int(np.prod(shape)):
                    raise FormatError(f"payload size mismatch for {entry['name']}")
                out.add(entry["name"], values.reshape(shape).astype(np.float64), entry["trainable"])
        return out
