"""Bit-exact file formats and run configuration.

Feature matrices travel in a small binary container (magic ``PIDF``)
and model checkpoints in another (magic ``PIDM``); both are
little-endian, row-major float64 and round-trip exactly.  Run
configuration is one JSON document with ``synth``, ``train`` and
``paths`` sections; unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError, ConfigError, IoError
from .model import ModelParams, TrainConfig
from .synth import Bag, SynthConfig

FEATURE_MAGIC = b"PIDF"
CHECKPOINT_MAGIC = b"PIDM"
FORMAT_VERSION = 1
DTYPE_FLOAT64 = 1


def _require_2d(arr) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise IoError("feature payload must be 1-D or 2-D")
    return a


def write_feature_file(path, matrix) -> None:
    a = _require_2d(matrix)
    rows, cols = a.shape
    payload = a.astype("<f8", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<B", DTYPE_FLOAT64))
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(payload)


def read_feature_file(path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    head = 4 + 4 + 1 + 16
    if len(blob) < head:
        raise IoError(f"{path}: truncated feature file")
    if blob[:4] != FEATURE_MAGIC:
        raise IoError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise IoError(f"{path}: unsupported version {version}")
    (dtype_code,) = struct.unpack("<B", blob[8:9])
    if dtype_code != DTYPE_FLOAT64:
        raise IoError(f"{path}: unsupported dtype code {dtype_code}")
    rows, cols = struct.unpack("<QQ", blob[9:25])
    expected = 8 * rows * cols
    payload = blob[head:]
    if len(payload) != expected:
        raise IoError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return data.reshape(rows, cols)


def _pack_matrix(a: np.ndarray) -> bytes:
    a = _require_2d(a)
    return struct.pack("<QQ", *a.shape) + a.astype("<f8").tobytes(order="C")


def _unpack_matrix(blob: bytes, offset: int):
    rows, cols = struct.unpack_from("<QQ", blob, offset)
    offset += 16
    n = 8 * rows * cols
    data = np.frombuffer(blob[offset:offset + n], dtype="<f8").astype(np.float64)
    if data.size != rows * cols:
        raise IoError("truncated matrix block in checkpoint")
    return data.reshape(rows, cols), offset + n


def write_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack(
            "<QQQQ", params.n_in, params.n_feat, params.r, params.n_classes
        ))
        fh.write(_pack_matrix(params.projector_w))
        fh.write(_pack_matrix(params.projector_b))
        fh.write(_pack_matrix(params.metric_w))
        fh.write(_pack_matrix(params.head_w))
        fh.write(_pack_matrix(params.head_b))


def read_checkpoint(path) -> ModelParams:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IoError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise IoError(f"{path}: unsupported checkpoint version {version}")
    n_in, n_feat, r, n_classes = struct.unpack_from("<QQQQ", blob, 8)
    offset = 8 + 32
    pw, offset = _unpack_matrix(blob, offset)
    pb, offset = _unpack_matrix(blob, offset)
    mw, offset = _unpack_matrix(blob, offset)
    hw, offset = _unpack_matrix(blob, offset)
    hb, offset = _unpack_matrix(blob, offset)
    params = ModelParams(
        projector_w=pw, projector_b=pb.ravel(), metric_w=mw,
        head_w=hw, head_b=hb.ravel(),
    )
    if (params.n_in, params.n_feat, params.r, params.n_classes) != (
        n_in, n_feat, r, n_classes
    ):
        raise IoError(f"{path}: checkpoint header disagrees with payload")
    return params


# -- dataset directory layout ------------------------------------------

MANIFEST_NAME = "manifest.jsonl"
ROLES_NAME = "roles.jsonl"
PROTOTYPES_NAME = "prototypes.pidf"


def write_dataset(dirpath, bags, prototypes=None) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    roles_lines = []
    for bag in bags:
        name = f"bag_{bag.bag_id:06d}.pidf"
        write_feature_file(d / name, bag.features)
        manifest_lines.append(json.dumps({
            "bag_id": bag.bag_id, "label": bag.label,
            "path": name, "m": bag.m,
        }))
        if bag.roles is not None:
            roles_lines.append(json.dumps({
                "bag_id": bag.bag_id, "roles": list(bag.roles),
            }))
    (d / MANIFEST_NAME).write_text("\n".join(manifest_lines) + "\n")
    if roles_lines:
        (d / ROLES_NAME).write_text("\n".join(roles_lines) + "\n")
    if prototypes is not None:
        write_feature_file(d / PROTOTYPES_NAME, prototypes.features)


def read_dataset(dirpath):
    """Bags from a manifest directory; roles attach when the file exists."""
    d = Path(dirpath)
    manifest = d / MANIFEST_NAME
    if not manifest.exists():
        raise IoError(f"no {MANIFEST_NAME} in {d}")
    roles_by_id = {}
    roles_file = d / ROLES_NAME
    if roles_file.exists():
        for line in roles_file.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            roles_by_id[rec["bag_id"]] = rec["roles"]
    bags = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        features = read_feature_file(d / rec["path"])
        if features.shape[0] != rec["m"]:
            raise IoError(
                f"bag {rec['bag_id']}: manifest m={rec['m']} but file has "
                f"{features.shape[0]} rows"
            )
        bags.append(Bag(
            features=features, label=int(rec["label"]),
            roles=roles_by_id.get(rec["bag_id"]), bag_id=int(rec["bag_id"]),
        ))
    return bags


# -- run configuration --------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RunPaths:
    dataset_dir: str = "dataset"
    prototypes: str | None = None     # default: dataset_dir/prototypes.pidf
    checkpoint: str | None = None     # default: out_dir/model.pidm
    out_dir: str = "out"

    def prototypes_path(self) -> Path:
        if self.prototypes is not None:
            return Path(self.prototypes)
        return Path(self.dataset_dir) / PROTOTYPES_NAME

    def checkpoint_path(self) -> Path:
        if self.checkpoint is not None:
            return Path(self.checkpoint)
        return Path(self.out_dir) / "model.pidm"


@dataclasses.dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig
    train: TrainConfig
    paths: RunPaths
    count: int = 100          # bags generated by the gen command


def _build_section(cls, data: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {section!r}: {exc}") from exc


def load_config(path, seed_override: int | None = None,
                out_override: str | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"synth", "train", "paths", "count"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {key}")
    synth_data = dict(raw.get("synth", {}))
    train_data = dict(raw.get("train", {}))
    paths_data = dict(raw.get("paths", {}))
    if seed_override is not None:
        synth_data["seed"] = seed_override
        train_data["seed"] = seed_override
    if out_override is not None:
        paths_data["out_dir"] = out_override
    count = raw.get("count", 100)
    if not isinstance(count, int) or count < 1:
        raise ConfigError("count must be a positive integer")
    return RunConfig(
        synth=_build_section(SynthConfig, synth_data, "synth"),
        train=_build_section(TrainConfig, train_data, "train"),
        paths=_build_section(RunPaths, paths_data, "paths"),
        count=count,
    )


def check_checkpoint_against(params: ModelParams, bags) -> None:
    if bags and bags[0].features.shape[1] != params.n_in:
        raise CheckpointMismatchError(
            f"checkpoint expects n_in={params.n_in}, dataset has "
            f"{bags[0].features.shape[1]}"
        )


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
