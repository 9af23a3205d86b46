"""
Named architectures (arch1-arch6 1D-CNNs, lstm64x2 baseline), cost accounting and checkpoints.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from dsp_features import NormStats
from errors import ConfigError, FormatError, ShapeError
from logger_config import setup_logger
from neural import LSTM, Conv1D, Dense, Dropout, Layer, MaxPool1D, Network, ReLU, Softmax

logger = setup_logger(__name__)

INPUT_DIMS = (64, 128, 256)
N_CLASSES = 2

# each conv set is followed by one max-pool; (kernel, filters)
_ARCH3_CONVS = [[(10, 32), (10, 32)], [(5, 64), (5, 64)]]
_ARCH4_CONVS = [[(20, 32), (20, 32)], [(10, 64), (10, 64)]]
CNN_ARCHITECTURES = {
    "arch1": {"conv_sets": [[(10, 32)], [(5, 64)]], "dense": [1024]},
    "arch2": {"conv_sets": [[(20, 32)], [(10, 64)]], "dense": [1024]},
    "arch3": {"conv_sets": _ARCH3_CONVS, "dense": [1024]},
    "arch4": {"conv_sets": _ARCH4_CONVS, "dense": [1024]},
    "arch5": {"conv_sets": _ARCH3_CONVS, "dense": [1024, 512]},
    "arch6": {"conv_sets": _ARCH4_CONVS, "dense": [1024, 512]},
}
LSTM_ARCHITECTURES = {"lstm64x2": {"hidden": [64, 64]}}
ARCHITECTURES = tuple(CNN_ARCHITECTURES) + tuple(LSTM_ARCHITECTURES)

CHECKPOINT_MAGIC = b"QSE1"
CHECKPOINT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sII")


@dataclass
class ModelSpec:
    name: str
    input_dim: int
    layers: List[Dict]

    @property
    def is_sequence(self) -> bool:
        return any(layer["type"] == "lstm" for layer in self.layers)

    def to_dict(self) -> Dict:
        return {"name": self.name, "input_dim": self.input_dim, "layers": self.layers}

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelSpec":
        try:
            return cls(name=data["name"], input_dim=int(data["input_dim"]), layers=list(data["layers"]))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed model spec: {e}") from e


@dataclass
class Checkpoint:
    spec: ModelSpec
    network: Network
    norm_stats: Optional[NormStats] = None
    metadata: Dict = field(default_factory=dict)


def build_spec(name: str, input_dim: int, dropout: float = 0.5) -> ModelSpec:
    if name not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    if input_dim not in INPUT_DIMS:
        raise ConfigError(f"input_dim must be one of {INPUT_DIMS}, got {input_dim}")

    layers: List[Dict] = []
    if name in LSTM_ARCHITECTURES:
        n_in = input_dim
        for hidden in LSTM_ARCHITECTURES[name]["hidden"]:
            layers.append({"type": "lstm", "n_in": n_in, "hidden": hidden})
            n_in = hidden
        layers.append({"type": "dropout", "rate": dropout})
        layers.append({"type": "dense", "n_in": n_in, "n_out": N_CLASSES, "flatten": False})
        layers.append({"type": "softmax"})
        return ModelSpec(name=name, input_dim=input_dim, layers=layers)

    arch = CNN_ARCHITECTURES[name]
    length, channels = input_dim, 1
    for conv_set in arch["conv_sets"]:
        for kernel, filters in conv_set:
            layers.append({"type": "conv1d", "kernel": kernel, "in_ch": channels, "out_ch": filters, "relu": True})
            channels = filters
        layers.append({"type": "maxpool1d", "size": 2})
        length //= 2

    n_in, flatten = length * channels, True
    for width in arch["dense"]:
        layers.append({"type": "dense", "n_in": n_in, "n_out": width, "flatten": flatten})
        layers.append({"type": "relu"})
        n_in, flatten = width, False
    layers.append({"type": "dropout", "rate": dropout})
    layers.append({"type": "dense", "n_in": n_in, "n_out": N_CLASSES, "flatten": False})
    layers.append({"type": "softmax"})
    return ModelSpec(name=name, input_dim=input_dim, layers=layers)


def _make_layer(spec: Dict, rng: np.random.Generator) -> Layer:
    kind = spec["type"]
    if kind == "conv1d":
        return Conv1D(spec["kernel"], spec["in_ch"], spec["out_ch"], relu=spec.get("relu", False), rng=rng)
    if kind == "maxpool1d":
        return MaxPool1D(spec.get("size", 2))
    if kind == "dense":
        return Dense(spec["n_in"], spec["n_out"], flatten=spec.get("flatten", False), rng=rng)
    if kind == "relu":
        return ReLU()
    if kind == "dropout":
        return Dropout(spec["rate"], seed=int(rng.integers(2**31)))
    if kind == "softmax":
        return Softmax()
    if kind == "lstm":
        return LSTM(spec["n_in"], spec["hidden"], rng=rng)
    raise ConfigError(f"unknown layer type {kind!r}")


def network_from_spec(spec: ModelSpec, seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)
    return Network([_make_layer(layer, rng) for layer in spec.layers])


def build(name: str, input_dim: int, seed: int = 0, dropout: float = 0.5) -> Checkpoint:
    """Spec plus freshly initialized network (He-uniform conv/dense, scaled-uniform LSTM)."""
    spec = build_spec(name, input_dim, dropout)
    return Checkpoint(spec=spec, network=network_from_spec(spec, seed), metadata={"init_seed": seed})


# ---------------------------------------------------------------------------
# Cost accounting (FLOPs = 2 x multiply-accumulates, biases and activations ignored)
# ---------------------------------------------------------------------------


def count_params(spec: ModelSpec) -> int:
    total = 0
    for layer in spec.layers:
        kind = layer["type"]
        if kind == "conv1d":
            total += layer["kernel"] * layer["in_ch"] * layer["out_ch"] + layer["out_ch"]
        elif kind == "dense":
            total += layer["n_in"] * layer["n_out"] + layer["n_out"]
        elif kind == "lstm":
            h = layer["hidden"]
            total += 4 * h * (layer["n_in"] + h) + 4 * h
    return total


def count_flops_per_frame(spec: ModelSpec) -> int:
    """For the CNNs a frame is one input vector; for the LSTM one time step."""
    flops = 0
    length = spec.input_dim
    for layer in spec.layers:
        kind = layer["type"]
        if kind == "conv1d":
            flops += 2 * layer["kernel"] * layer["in_ch"] * layer["out_ch"] * length
        elif kind == "maxpool1d":
            length //= layer["size"]
        elif kind == "dense":
            flops += 2 * layer["n_in"] * layer["n_out"]
        elif kind == "lstm":
            h = layer["hidden"]
            flops += 2 * 4 * h * (layer["n_in"] + h)
    return flops


def count_flops_per_utterance(spec: ModelSpec, n_frames: int) -> int:
    return count_flops_per_frame(spec) * n_frames


def sequential_steps(spec: ModelSpec, n_frames: int) -> int:
    """Dependent steps per utterance: CNN frames are independent, LSTM steps chain."""
    n_lstm = sum(1 for layer in spec.layers if layer["type"] == "lstm")
    return n_frames * n_lstm if n_lstm else 1


def layer_summary(spec: ModelSpec) -> List[str]:
    names = []
    for layer in spec.layers:
        kind = layer["type"]
        if kind == "conv1d":
            names.append(f"Conv({layer['kernel']},{layer['out_ch']})")
        elif kind == "maxpool1d":
            names.append("Pool")
        elif kind == "dense":
            names.append(f"Dense({layer['n_out']})")
        elif kind == "lstm":
            names.append(f"LSTM({layer['hidden']})")
        else:
            names.append(kind.capitalize() if kind != "relu" else "ReLU")
    return names


def describe(spec: ModelSpec, n_frames: Optional[int] = None) -> str:
    lines = [
        f"model: {spec.name} (input_dim {spec.input_dim})",
        "layers: " + ", ".join(layer_summary(spec)),
        f"params: {count_params(spec)}",
        f"flops_per_frame: {count_flops_per_frame(spec)}  (2 x MAC)",
    ]
    if n_frames is not None:
        lines.append(f"flops_per_utterance[{n_frames} frames]: {count_flops_per_utterance(spec, n_frames)}")
        lines.append(f"sequential_steps[{n_frames} frames]: {sequential_steps(spec, n_frames)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = [(name, np.ascontiguousarray(p, dtype="<f4")) for name, p in ckpt.network.named_parameters()]
    header = {
        "spec": ckpt.spec.to_dict(),
        "metadata": ckpt.metadata,
        "norm_stats": ckpt.norm_stats.to_dict() if ckpt.norm_stats is not None else None,
        "param_blocks": [{"name": name, "shape": list(b.shape), "count": int(b.size)} for name, b in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for _, block in blocks:
            f.write(block.tobytes())
    logger.info(f"Saved checkpoint {path} ({ckpt.spec.name}, {ckpt.network.n_params} params)")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _CKPT_PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint prefix")
    magic, version, header_len = _CKPT_PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    offset = _CKPT_PREFIX.size
    if offset + header_len > len(data):
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable checkpoint header ({e})") from e
    offset += header_len
    if not isinstance(header, dict):
        raise FormatError(f"{path}: checkpoint header must be a JSON object")

    spec = ModelSpec.from_dict(header.get("spec", {}))
    try:
        network = network_from_spec(spec)
    except (KeyError, TypeError, ValueError, AttributeError, ConfigError) as e:
        raise FormatError(f"{path}: malformed layer in checkpoint spec ({e})") from e
    expected = list(network.named_parameters())
    declared = header.get("param_blocks", [])
    if not isinstance(declared, list) or not all(isinstance(b, dict) for b in declared):
        raise FormatError(f"{path}: param_blocks must be a list of objects")
    if len(declared) != len(expected):
        raise FormatError(f"{path}: header lists {len(declared)} parameter blocks, spec needs {len(expected)}")

    for block, (name, param) in zip(declared, expected):
        try:
            shape = tuple(int(n) for n in block.get("shape", ()))
            count = int(block.get("count", -1))
        except (TypeError, ValueError) as e:
            raise FormatError(f"{path}: block {name} has a malformed shape or count ({e})") from e
        if count != int(np.prod(shape)) or shape != param.shape:
            raise FormatError(f"{path}: block {name} declares shape {shape} / count {count}, expected {param.shape}")
        n_bytes = count * 4
        if offset + n_bytes > len(data):
            raise FormatError(f"{path}: truncated parameter block {name}")
        param[...] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += n_bytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after parameter blocks")

    norm = header.get("norm_stats")
    return Checkpoint(
        spec=spec,
        network=network,
        norm_stats=NormStats.from_dict(norm) if norm else None,
        metadata=header.get("metadata", {}),
    )


def check_input_dim(spec: ModelSpec, dim: int) -> None:
    if dim != spec.input_dim:
        raise ShapeError(f"{spec.name} was built for {spec.input_dim}-dim features, got {dim}")
