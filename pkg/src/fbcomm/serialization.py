"""Checkpoint and loss-history files.

A checkpoint is one file: a magic line naming the format version, a
JSON header describing the codec geometry and every tensor (name,
shape, order), then the raw float64 payload in header order, row major.
The writer is deterministic, so identical training runs produce
byte-identical checkpoints.  The optimizer section is optional and
carries the Adam moments and step count for exact resumption.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .codec import CodecConfig, CodecModel, init_codec
from .errors import ConfigError
from .training import OptimizerState

MAGIC = b"feedback-codec-checkpoint v1\n"
HISTORY_COLUMNS = ("update_index", "stage", "train_snr_db", "loss")


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume a trained codec."""

    config: CodecConfig
    model: CodecModel
    calibration: np.ndarray
    optimizer: OptimizerState | None = None


def _tensor_entries(pairs):
    return [{"name": name, "shape": list(value.shape)} for name, value in pairs]


def save_checkpoint(
    path: str,
    config: CodecConfig,
    model: CodecModel,
    calibration: np.ndarray,
    optimizer: OptimizerState | None = None,
) -> None:
    model_pairs = list(model.named_tensors())
    header = {
        "format_version": 1,
        "codec_config": asdict(config),
        "calibration_size": int(calibration.size),
        "tensors": _tensor_entries(model_pairs),
    }
    payload = [np.ascontiguousarray(calibration, dtype=np.float64)]
    payload += [np.ascontiguousarray(v, dtype=np.float64) for _, v in model_pairs]
    if optimizer is not None:
        names = sorted(optimizer.m)
        header["optimizer"] = {
            "step": optimizer.step,
            "tensors": names,
        }
        payload += [np.ascontiguousarray(optimizer.m[n], dtype=np.float64)
                    for n in names]
        payload += [np.ascontiguousarray(optimizer.v[n], dtype=np.float64)
                    for n in names]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(blob.encode("ascii"))
        fh.write(b"\n")
        for arr in payload:
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ConfigError(f"not a codec checkpoint: {path}")
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format_version") != 1:
            raise ConfigError("unsupported checkpoint format version")
        raw = fh.read()

    config = CodecConfig(**header["codec_config"])
    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype=np.float64, count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).copy()

    calibration = take([header["calibration_size"]])
    tensors = {}
    for entry in header["tensors"]:
        tensors[entry["name"]] = take(entry["shape"])

    skeleton = init_codec(config, np.random.default_rng(0))
    model = skeleton.with_tensors(tensors)

    optimizer = None
    if "optimizer" in header:
        names = header["optimizer"]["tensors"]
        shapes = {e["name"]: e["shape"] for e in header["tensors"]}
        params = {n: np.zeros(shapes[n]) for n in names}
        optimizer = OptimizerState(params)
        optimizer.step = int(header["optimizer"]["step"])
        optimizer.m = {n: take(shapes[n]) for n in names}
        optimizer.v = {n: take(shapes[n]) for n in names}
    if offset != len(raw):
        raise ConfigError("checkpoint payload length does not match header")
    return Checkpoint(config=config, model=model, calibration=calibration,
                      optimizer=optimizer)


def history_to_csv(rows) -> str:
    """Loss history rows rendered as CSV text with a fixed column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for update_index, stage, snr_db, loss in rows:
        writer.writerow([update_index, stage, repr(float(snr_db)),
                         repr(float(loss))])
    return buf.getvalue()


def save_history(path: str, rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(history_to_csv(rows))


def load_history(path: str) -> list[tuple[int, str, float, float]]:
    with open(path, encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != HISTORY_COLUMNS:
            raise ConfigError("unexpected loss-history columns")
        return [(int(r[0]), r[1], float(r[2]), float(r[3])) for r in reader]
