import math

import numpy as np
import pytest

from asrnn import tasks
from asrnn.rng import RngStream
from asrnn.tasks import (CopySpec, Dataset, DatasetFormatError, DatasetVersionError,
                         SignalIdSpec, TaskExample, gen_copy, gen_signal_id,
                         load_dataset, loads_dataset, dumps_dataset, save_dataset)

SMALL = SignalIdSpec(train_per_class=20, test_per_class=5)


def test_signal_id_counts_and_balance():
    train, test = gen_signal_id(SMALL, seed=1)
    assert len(train) == 60 and len(test) == 15
    assert np.bincount([ex.target for ex in train]).tolist() == [20, 20, 20]
    assert np.bincount([ex.target for ex in test]).tolist() == [5, 5, 5]
    assert all(ex.inputs.shape == (1000, 1) for ex in train.examples)


def test_signal_id_default_spec_counts():
    spec = SignalIdSpec()
    assert 3 * (spec.train_per_class + spec.test_per_class) == 6000
    assert spec.train_per_class == 1600 and spec.test_per_class == 400


@pytest.mark.parametrize("seed", range(200))
def test_signal_id_structure(seed):
    spec = SignalIdSpec()
    x, parts = tasks.signal_id_example(spec, seed % 3, RngStream(seed))
    assert 3 <= len(parts) <= 5
    inside = np.zeros(spec.length, dtype=bool)
    for start, length in parts:
        assert 20 <= length <= 100
        assert 0 <= start and start + length <= spec.length
        assert not inside[start:start + length].any()
        inside[start:start + length] = True
    density = inside.sum() / spec.length
    assert 0.06 <= density <= 0.5
    noise = x[~inside, 0]
    assert np.all(np.abs(noise) < 1.0)
    # values beyond the noise range can only come from a wave
    assert not np.any(np.abs(x[~inside, 0]) > 1)


def test_waves_have_expected_shapes():
    sq = tasks.wave("square", 40, 3.0, 20.0, 0.0)
    assert set(np.unique(sq)) == {-3.0, 3.0}
    saw = tasks.wave("sawtooth", 20, 2.0, 20.0, 0.0)
    np.testing.assert_allclose(np.diff(saw), 0.2)
    sine = tasks.wave("sine", 20, 1.5, 20.0, 0.0)
    assert sine[5] == pytest.approx(1.5)


def test_place_intervals_infeasible():
    with pytest.raises(tasks.GenerationError):
        tasks.place_intervals([6, 6], 10, RngStream(0), max_tries=50)


def test_copy_structure():
    train, test = gen_copy(CopySpec(delay=30, train_samples=50, test_samples=5), seed=2)
    assert len(train) == 50 and len(test) == 5
    for ex in train.examples + test.examples:
        symbols = np.argmax(ex.inputs, axis=1)
        assert ex.inputs.shape == (50, 10)
        assert np.all(ex.inputs.sum(axis=1) == 1)
        assert np.flatnonzero(symbols == 9).tolist() == [39]
        assert np.all(symbols[:10] <= 7)
        assert np.all(symbols[10:39] == 8) and np.all(symbols[40:] == 8)
        assert np.array_equal(ex.target[-10:], symbols[:10])
        assert np.all(ex.target[:-10] == 8)
        assert ex.mask.sum() == 50


def test_copy_default_sizes():
    spec = CopySpec()
    assert spec.train_samples == 10000 and spec.delay + 20 == 220


def test_copy_payload_uniform():
    rng = RngStream(0)
    counts = np.zeros(8)
    for i in range(10 ** 4):
        symbols, _ = tasks.copy_symbols(5, RngStream(i))
        counts += np.bincount(symbols[:10], minlength=10)[:8]
    freq = counts / counts.sum()
    assert np.max(np.abs(freq - 0.125)) < 0.01


def test_memoryless_entropy():
    assert tasks.memoryless_entropy(200) == pytest.approx(10 * math.log(8) / 220)
    assert round(tasks.memoryless_entropy(200), 5) == 0.09452
    assert round(tasks.memoryless_entropy(100), 4) == 0.1733


def test_generators_are_deterministic():
    a = gen_signal_id(SMALL, seed=4)
    b = gen_signal_id(SMALL, seed=4)
    assert dumps_dataset(a[0]) == dumps_dataset(b[0])
    c = gen_copy(CopySpec(delay=10, train_samples=20, test_samples=2), seed=4)
    d = gen_copy(CopySpec(delay=10, train_samples=20, test_samples=2), seed=4)
    assert dumps_dataset(c[0]) == dumps_dataset(d[0])
    assert dumps_dataset(a[0]) != dumps_dataset(gen_signal_id(SMALL, seed=5)[0])


def test_round_trip_empty(tmp_path):
    ds = Dataset("copy", 10, 10, [], {"seed": 3})
    save_dataset(ds, tmp_path / "e.bin")
    assert load_dataset(tmp_path / "e.bin") == ds


def test_round_trip_signal_id(tmp_path):
    spec = SignalIdSpec(train_per_class=34, test_per_class=0)
    train, _ = gen_signal_id(spec, seed=9)
    train.examples = train.examples[:100]
    save_dataset(train, tmp_path / "s.bin")
    back = load_dataset(tmp_path / "s.bin")
    assert back == train
    for a, b in zip(back.examples, train.examples):
        assert a.inputs.tobytes() == b.inputs.tobytes()


def test_rejects_corrupt_magic():
    train, _ = gen_copy(CopySpec(delay=5, train_samples=3, test_samples=0), seed=0)
    data = bytearray(dumps_dataset(train))
    data[0] ^= 0xFF
    with pytest.raises(DatasetFormatError) as err:
        loads_dataset(bytes(data))
    assert err.value.offset == 0


def test_rejects_version_mismatch():
    train, _ = gen_copy(CopySpec(delay=5, train_samples=3, test_samples=0), seed=0)
    data = bytearray(dumps_dataset(train))
    data[8] = 99
    with pytest.raises(DatasetVersionError):
        loads_dataset(bytes(data))


def test_truncated_file_reports_offset():
    train, _ = gen_copy(CopySpec(delay=5, train_samples=3, test_samples=0), seed=0)
    data = dumps_dataset(train)
    with pytest.raises(DatasetFormatError) as err:
        loads_dataset(data[:-7])
    assert 0 < err.value.offset <= len(data)


def test_frames_must_be_float32_exact():
    ds = Dataset("signal-id", 1, 3, [TaskExample(np.array([[0.1]]), 0)])
    with pytest.raises(ValueError):
        dumps_dataset(ds)
