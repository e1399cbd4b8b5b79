"""Named-tensor bundles, the LVWT weight file format, and shape manifests.

Weights are stored as little-endian float32 and computed on in float64.
Initialization therefore rounds through float32 so that a save/load round
trip is bit-identical.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadHeader, BadMagic, ShapeManifestMismatch

__all__ = [
    "TensorBundle",
    "save_weights",
    "load_weights",
    "sidecar_path",
    "validate_manifest",
    "count_params",
    "init_weights",
]

LVWT_MAGIC = b"LVWT"


@dataclass(frozen=True)
class TensorBundle:
    """An ordered mapping of unique tensor names to float64 arrays."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        fixed = {}
        for name, arr in self.arrays.items():
            fixed[name] = np.asarray(arr, dtype=np.float64)
        object.__setattr__(self, "arrays", fixed)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.arrays[name]
        except KeyError:
            raise ShapeManifestMismatch(f"bundle is missing tensor {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self) -> list[str]:
        return list(self.arrays)

    def replaced(self, name: str, arr: np.ndarray) -> "TensorBundle":
        """Copy of the bundle with one tensor swapped out."""
        if name not in self.arrays:
            raise ShapeManifestMismatch(f"bundle is missing tensor {name!r}")
        new = dict(self.arrays)
        new[name] = np.asarray(arr, dtype=np.float64)
        return TensorBundle(new)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_weights(path, bundle: TensorBundle, config: dict | None = None) -> None:
    """Write an LVWT file: magic, u32 tensor count, then per tensor a u16
    name length, the UTF-8 name, u8 rank, u32 dims, and f32 data.

    When config is given, a JSON sidecar (path + ".json") records it.
    """
    chunks = [LVWT_MAGIC, struct.pack("<I", len(bundle.arrays))]
    for name, arr in bundle.arrays.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank {arr.ndim} too large for {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))
    if config is not None:
        sidecar_path(path).write_text(json.dumps(config, indent=2, sort_keys=True))


def load_weights(path) -> tuple[TensorBundle, dict | None]:
    """Read an LVWT file and its JSON sidecar (None when absent)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != LVWT_MAGIC:
        raise BadMagic(f"{path}: not an LVWT weight file")
    (count,) = struct.unpack("<I", raw[4:8])
    pos = 8
    arrays: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise BadMagic(f"{path}: truncated at byte {pos}")
        out = raw[pos : pos + n]
        pos += n
        return out

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in arrays:
            raise BadHeader(f"{path}: duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n_items), dtype="<f4")
        arrays[name] = data.astype(np.float64).reshape(shape)
    if pos != len(raw):
        raise BadHeader(f"{path}: {len(raw) - pos} trailing bytes")

    config = None
    side = sidecar_path(path)
    if side.exists():
        config = json.loads(side.read_text())
    return TensorBundle(arrays), config


def validate_manifest(bundle: TensorBundle, manifest: dict[str, tuple]) -> None:
    """Check the bundle holds exactly the manifest's tensors at its shapes."""
    problems = []
    for name, shape in manifest.items():
        if name not in bundle:
            problems.append(f"missing tensor {name!r} (expected shape {shape})")
        elif bundle.arrays[name].shape != tuple(shape):
            problems.append(
                f"tensor {name!r} has shape {bundle.arrays[name].shape}, "
                f"expected {tuple(shape)}"
            )
    for name in bundle.names():
        if name not in manifest:
            problems.append(f"unexpected tensor {name!r}")
    if problems:
        raise ShapeManifestMismatch("; ".join(problems))


def _is_stat(name: str) -> bool:
    return name.endswith(".mean") or name.endswith(".var")


def count_params(manifest: dict[str, tuple], trainable_only: bool = True) -> int:
    """Total parameter count; running statistics are not trainable."""
    total = 0
    for name, shape in manifest.items():
        if trainable_only and _is_stat(name):
            continue
        total += int(np.prod(shape, dtype=np.int64)) if shape else 1
    return total


def init_weights(manifest: dict[str, tuple], seed: int) -> TensorBundle:
    """Seeded random bundle for a manifest.

    Convolution kernels (rank >= 3) draw Normal(0, 0.01); matrix weights
    draw uniform +-1/sqrt(fan_in); relative-position tables draw
    Normal(0, 0.02); norm gains and running variances start at 1, all
    biases, shifts, and running means at 0. Values are rounded through
    float32 so serialization is lossless.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(manifest):
        shape = tuple(manifest[name])
        if name.endswith(".gamma") or name.endswith(".var"):
            arr = np.ones(shape)
        elif name.endswith((".beta", ".mean", ".bias")):
            arr = np.zeros(shape)
        elif name.endswith(".relpos"):
            arr = rng.normal(0.0, 0.02, size=shape)
        elif len(shape) >= 3:
            arr = rng.normal(0.0, 0.01, size=shape)
        elif len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[1])
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
        arrays[name] = arr.astype(np.float32).astype(np.float64)
    # restore manifest order so saved files read naturally
    ordered = {name: arrays[name] for name in manifest}
    return TensorBundle(ordered)
