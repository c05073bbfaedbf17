"""Synthetic benchmark generators and the binary dataset format.

Two tasks are supported:

* ``signal-id`` -- long noisy scalar sequences holding a few short waves of
  one type (square, sawtooth, sine); the label is the wave type.
* ``copy`` -- the copy memory problem: ten payload symbols, a blank delay,
  a trigger, then the payload must be reproduced.

Every example ``i`` is generated from its own stream seeded with
``seed + i`` so generation is reproducible and order independent.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .rng import RngStream

WAVES = ("square", "sawtooth", "sine")
COPY_PAYLOAD = 10
COPY_SYMBOLS = 10
BLANK, TRIGGER = 8, 9

MAGIC = b"ASRNNDS\x00"
FORMAT_VERSION = 1


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DatasetVersionError(DatasetFormatError):
    pass


@dataclass
class TaskExample:
    inputs: np.ndarray
    target: object
    mask: np.ndarray | None = None

    @property
    def per_step(self):
        return np.ndim(self.target) == 1

    def __eq__(self, other):
        if not isinstance(other, TaskExample):
            return NotImplemented
        same_mask = (self.mask is None and other.mask is None) or (
            self.mask is not None and other.mask is not None
            and np.array_equal(self.mask, other.mask))
        return (self.inputs.shape == other.inputs.shape
                and self.inputs.tobytes() == other.inputs.tobytes()
                and np.array_equal(self.target, other.target) and same_mask)


@dataclass
class Dataset:
    task: str
    num_inputs: int
    num_classes: int
    examples: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.task == other.task and self.num_inputs == other.num_inputs
                and self.num_classes == other.num_classes
                and self.header == other.header
                and len(self) == len(other)
                and all(a == b for a, b in zip(self.examples, other.examples)))

    @property
    def per_step(self):
        return self.task == "copy"


# ---------------------------------------------------------------------------
# low density signal type identification

@dataclass
class SignalIdSpec:
    length: int = 1000
    min_parts: int = 3
    max_parts: int = 5
    min_part_length: int = 20
    max_part_length: int = 100
    amplitude: float = 7.0
    noise: float = 1.0
    min_period: float = 10.0
    max_period: float = 50.0
    train_per_class: int = 1600
    test_per_class: int = 400

    def validate(self):
        if not 1 <= self.min_parts <= self.max_parts:
            raise ValueError("need 1 <= min_parts <= max_parts")
        if not 1 <= self.min_part_length <= self.max_part_length:
            raise ValueError("need 1 <= min_part_length <= max_part_length")
        if self.max_parts * self.max_part_length > self.length:
            raise ValueError("subsequences cannot fit inside the sequence")
        if not 0 < self.min_period <= self.max_period:
            raise ValueError("need 0 < min_period <= max_period")

    def as_header(self):
        return {f"signal.{f.name}": getattr(self, f.name) for f in fields(self)}


def wave(kind, n, amplitude, period, phase):
    """``n`` unit-step samples of a wave starting at ``phase`` samples."""
    pos = np.mod(np.arange(n) + phase, period) / period
    if kind == "square":
        return np.where(pos < 0.5, amplitude, -amplitude)
    if kind == "sawtooth":
        return -amplitude + 2.0 * amplitude * pos
    if kind == "sine":
        return amplitude * np.sin(2.0 * np.pi * pos)
    raise ValueError(f"unknown wave {kind!r}")


def place_intervals(lengths, total, rng, max_tries=1000):
    """Start indices of disjoint intervals with the given lengths, by rejection."""
    for _ in range(max_tries):
        starts, taken = [], np.zeros(total, dtype=bool)
        for length in lengths:
            start = rng.integers(0, total - length)
            if taken[start:start + length].any():
                break
            taken[start:start + length] = True
            starts.append(start)
        else:
            return starts
    raise GenerationError(f"could not place intervals {lengths} in length {total}")


def signal_id_example(spec, label, rng):
    """One sequence with its label and the list of (start, length) parts."""
    parts = rng.integers(spec.min_parts, spec.max_parts)
    lengths = [rng.integers(spec.min_part_length, spec.max_part_length)
               for _ in range(parts)]
    starts = place_intervals(lengths, spec.length, rng)
    x = rng.uniform(spec.length, -spec.noise, spec.noise)
    for start, length in zip(starts, lengths):
        amp = rng.uniform(None, -spec.amplitude, spec.amplitude)
        period = rng.uniform(None, spec.min_period, spec.max_period)
        phase = rng.uniform(None, 0.0, period)
        x[start:start + length] = wave(WAVES[label], length, amp, period, phase)
    # frames are stored as float32
    x = x.astype(np.float32).astype(np.float64)
    return x[:, None], list(zip(starts, lengths))


def gen_signal_id(spec, seed):
    """Balanced train/test datasets; example ``i`` has class ``i % 3``."""
    spec.validate()
    per_class = spec.train_per_class + spec.test_per_class
    train, test = [], []
    for i in range(3 * per_class):
        label = i % 3
        inputs, _ = signal_id_example(spec, label, RngStream.named(seed + i, "data"))
        ex = TaskExample(inputs, label)
        (train if i // 3 < spec.train_per_class else test).append(ex)
    header = {"task": "signal-id", "seed": seed, **spec.as_header()}
    return (Dataset("signal-id", 1, 3, train, {**header, "split": "train"}),
            Dataset("signal-id", 1, 3, test, {**header, "split": "test"}))


# ---------------------------------------------------------------------------
# copy memory

@dataclass
class CopySpec:
    delay: int = 200
    train_samples: int = 10000
    test_samples: int = 1000

    def as_header(self):
        return {f"copy.{f.name}": getattr(self, f.name) for f in fields(self)}


def copy_symbols(delay, rng):
    """Input and target symbol sequences of length ``delay + 20``."""
    payload = rng.integers(0, 7, COPY_PAYLOAD)
    total = delay + 2 * COPY_PAYLOAD
    inputs = np.full(total, BLANK, dtype=np.int64)
    inputs[:COPY_PAYLOAD] = payload
    inputs[delay + COPY_PAYLOAD - 1] = TRIGGER
    target = np.full(total, BLANK, dtype=np.int64)
    target[-COPY_PAYLOAD:] = payload
    return inputs, target


def copy_example(delay, rng):
    symbols, target = copy_symbols(delay, rng)
    return TaskExample(np.eye(COPY_SYMBOLS)[symbols], target,
                       np.ones(len(target), dtype=np.uint8))


def gen_copy(spec, seed):
    if spec.delay < 1:
        raise ValueError("delay must be >= 1")
    header = {"task": "copy", "seed": seed, **spec.as_header()}
    train = [copy_example(spec.delay, RngStream.named(seed + i, "data"))
             for i in range(spec.train_samples)]
    offset = spec.train_samples
    test = [copy_example(spec.delay, RngStream.named(seed + offset + i, "data"))
            for i in range(spec.test_samples)]
    return (Dataset("copy", COPY_SYMBOLS, COPY_SYMBOLS, train, {**header, "split": "train"}),
            Dataset("copy", COPY_SYMBOLS, COPY_SYMBOLS, test, {**header, "split": "test"}))


def memoryless_entropy(delay):
    """Cross-entropy of predicting blanks, then guessing among 8 payload symbols."""
    return COPY_PAYLOAD * math.log(8) / (delay + 2 * COPY_PAYLOAD)


# ---------------------------------------------------------------------------
# binary format
#
#   magic (8 bytes) | version u32 | header length u32 | header utf-8 text
#   | task kind u8 | num_inputs u32 | num_classes u32 | count u64
#   | per example: T u32, frames f32[T*n], per_step u8,
#                  (label u16) or (targets u16[T], mask u8[T])
#
# All integers little-endian.  The header is "key=value" lines.

def _format_header(header):
    lines = []
    for key in sorted(header):
        value = header[key]
        if "\n" in str(key) or "\n" in str(value) or "=" in str(key):
            raise ValueError(f"header entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}")
    return "\n".join(lines)


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_header(text):
    header = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            header[key] = _parse_value(value)
    return header


_TASK_CODES = {"signal-id": 1, "copy": 2}


def dumps_dataset(ds):
    out = io.BytesIO()
    header = _format_header(ds.header).encode()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    out.write(header)
    out.write(struct.pack("<BIIQ", _TASK_CODES[ds.task], ds.num_inputs,
                          ds.num_classes, len(ds.examples)))
    for ex in ds.examples:
        frames = np.asarray(ex.inputs)
        if frames.ndim != 2 or frames.shape[1] != ds.num_inputs:
            raise ValueError(f"example frames {frames.shape} do not match "
                             f"{ds.num_inputs} inputs")
        f32 = frames.astype("<f4")
        if not np.array_equal(f32.astype(np.float64), frames):
            raise ValueError("frames must be exactly representable as float32")
        out.write(struct.pack("<I", len(frames)))
        out.write(f32.tobytes())
        if ex.per_step:
            target = np.asarray(ex.target)
            mask = (np.ones(len(target)) if ex.mask is None else ex.mask)
            out.write(struct.pack("<B", 1))
            out.write(target.astype("<u2").tobytes())
            out.write(np.asarray(mask).astype(np.uint8).tobytes())
        else:
            out.write(struct.pack("<BH", 0, int(ex.target)))
    return out.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise DatasetFormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads_dataset(data):
    r = _Reader(bytes(data))
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise DatasetFormatError("bad magic bytes, not a dataset file", 0)
    version, header_len = r.unpack("<II", "version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(
            f"dataset format version {version}, expected {FORMAT_VERSION}", len(MAGIC))
    at = r.pos
    try:
        header = parse_header(r.take(header_len, "header").decode())
    except UnicodeDecodeError:
        raise DatasetFormatError("header is not valid utf-8", at) from None
    at = r.pos
    code, num_inputs, num_classes, count = r.unpack("<BIIQ", "dataset record")
    tasks = {v: k for k, v in _TASK_CODES.items()}
    if code not in tasks:
        raise DatasetFormatError(f"unknown task code {code}", at)
    examples = []
    for _ in range(count):
        (T,) = r.unpack("<I", "sequence length")
        frames = np.frombuffer(r.take(4 * T * num_inputs, "frames"), dtype="<f4")
        frames = frames.astype(np.float64).reshape(T, num_inputs)
        at = r.pos
        (per_step,) = r.unpack("<B", "target kind")
        if per_step == 1:
            target = np.frombuffer(r.take(2 * T, "targets"), "<u2").astype(np.int64)
            mask = np.frombuffer(r.take(T, "mask"), np.uint8).copy()
            examples.append(TaskExample(frames, target, mask))
        elif per_step == 0:
            (label,) = r.unpack("<H", "label")
            examples.append(TaskExample(frames, label))
        else:
            raise DatasetFormatError(f"bad target kind {per_step}", at)
    if r.pos != len(r.data):
        raise DatasetFormatError("trailing bytes after last example", r.pos)
    return Dataset(tasks[code], num_inputs, num_classes, examples, header)


def save_dataset(ds, path):
    data = dumps_dataset(ds)
    with open(path, "wb") as fh:
        fh.write(data)


def load_dataset(source):
    """Read a dataset from a path or binary file object.

    The magic bytes are checked before anything else is read.
    """
    if hasattr(source, "read"):
        return _read_dataset(source)
    with open(source, "rb") as fh:
        return _read_dataset(fh)


def _read_dataset(fh):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise DatasetFormatError("bad magic bytes, not a dataset file", 0)
    return loads_dataset(magic + fh.read())
