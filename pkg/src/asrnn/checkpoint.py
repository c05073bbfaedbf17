"""Versioned binary checkpoints.

Layout (little-endian): magic, version u32, text block (u32 length + utf-8
``key=value`` lines holding the run config, model shape and RNG counters),
parameter count u32, then per parameter: name (u16 length + utf-8), ndim u8,
dims u32 each, float64 data.  Parameters appear in the model's declared order.
"""

from __future__ import annotations

import struct

import numpy as np

from .cells import Model, ScaleMode
from .config import ExperimentConfig, parse_pairs
from .scaleconv import make_haar_bank
from .tasks import DatasetFormatError, DatasetVersionError, _Reader

MAGIC = b"ASRNNCK\x00"
VERSION = 1


def dumps_checkpoint(model, config, rng_state=None):
    lines = [config.to_text().rstrip("\n"),
             f"model.cell={model.cell}", f"model.hidden={model.hidden}",
             f"model.inputs={model.inputs}", f"model.classes={model.classes}",
             f"model.mode={model.mode.kind}",
             f"model.scale={'' if model.mode.scale is None else model.mode.scale}",
             f"model.J={model.bank.num_scales}", f"model.K={model.bank.kernel_size}",
             f"model.tau={model.tau!r}"]
    for key, value in (rng_state or {}).items():
        lines.append(f"rng.{key}={value}")
    text = ("\n".join(lines) + "\n").encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(text)), text,
           struct.pack("<I", len(model.params))]
    for name, node in model.params.items():
        raw = name.encode()
        value = node.value
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        out.append(value.astype("<f8").tobytes())
    return b"".join(out)


def loads_checkpoint(data):
    """Return ``(model, config, rng_state)``."""
    r = _Reader(bytes(data))
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise DatasetFormatError("bad magic bytes, not a checkpoint", 0)
    version, text_len = r.unpack("<II", "version")
    if version != VERSION:
        raise DatasetVersionError(f"checkpoint version {version}, expected {VERSION}",
                                  len(MAGIC))
    pairs = parse_pairs(r.take(text_len, "config block").decode().splitlines())
    model_keys = {k[6:]: v for k, v in pairs.items() if k.startswith("model.")}
    rng_state = {k[4:]: int(v) for k, v in pairs.items() if k.startswith("rng.")}
    config = ExperimentConfig().update(
        {k: v for k, v in pairs.items() if "." not in k})
    (count,) = r.unpack("<I", "parameter count")
    params = {}
    for _ in range(count):
        (n,) = r.unpack("<H", "name length")
        name = r.take(n, "name").decode()
        (ndim,) = r.unpack("<B", "rank")
        shape = r.unpack(f"<{ndim}I", "shape")
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(8 * size, name), "<f8").astype(
            np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise DatasetFormatError("trailing bytes after parameters", r.pos)

    scale = model_keys.get("scale")
    mode = ScaleMode.parse(model_keys["mode"], int(scale) if scale else None)
    model = Model(model_keys["cell"], int(model_keys["hidden"]), int(model_keys["inputs"]),
                  int(model_keys["classes"]), mode,
                  make_haar_bank(int(model_keys["K"]), int(model_keys["J"])), params,
                  float(model_keys["tau"]), config.hard_forward)
    return model, config, rng_state


def save_checkpoint(path, model, config, rng_state=None):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(model, config, rng_state))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
