"""Task corpus round trips: JSONL and binary formats, canonical bytes,
and corruption handling."""

import json

import numpy as np
import pytest

from survpfn.corpus import (
    dgp_spec_from_dict,
    dgp_spec_to_dict,
    read_binary,
    read_jsonl,
    task_from_record,
    task_to_record,
    write_binary,
    write_jsonl,
)
from survpfn.errors import DataError
from survpfn.prior import PriorConfig, SimpleExponentialPrior, SyntheticPrior, sample_dgp
from survpfn.rng import RngStream


def sample_tasks(n: int, seed: int = 0):
    prior = SyntheticPrior(PriorConfig())
    return [
        prior.sample_task(RngStream(seed).derive("corpus-task", i), 12, 3)
        for i in range(n)
    ]


def assert_tasks_equal(a, b):
    np.testing.assert_array_equal(a.context.x, b.context.x)
    np.testing.assert_array_equal(a.context.times, b.context.times)
    np.testing.assert_array_equal(a.context.events, b.context.events)
    np.testing.assert_array_equal(a.x_query, b.x_query)
    np.testing.assert_array_equal(a.query_event_times, b.query_event_times)
    np.testing.assert_array_equal(a.query_censor_times, b.query_censor_times)
    np.testing.assert_array_equal(a.latent_event_times, b.latent_event_times)
    np.testing.assert_array_equal(a.latent_censor_times, b.latent_censor_times)
    assert a.censor_scale == b.censor_scale
    assert a.spec == b.spec


def test_dgp_spec_dict_round_trip():
    spec = sample_dgp(RngStream(3).derive("dgp"), PriorConfig())
    assert dgp_spec_from_dict(dgp_spec_to_dict(spec)) == spec
    assert json.loads(json.dumps(dgp_spec_to_dict(spec))) == dgp_spec_to_dict(spec)


def test_task_record_round_trip():
    task = sample_tasks(1)[0]
    assert_tasks_equal(task_from_record(task_to_record(task)), task)


def test_task_record_rebuilds_observed_pairs():
    task = sample_tasks(1, seed=5)[0]
    back = task_from_record(task_to_record(task))
    np.testing.assert_array_equal(
        back.context.times,
        np.minimum(back.latent_event_times, back.latent_censor_times),
    )
    np.testing.assert_array_equal(
        back.context.events,
        (back.latent_event_times <= back.latent_censor_times).astype(int),
    )


def test_task_record_without_spec():
    task = SimpleExponentialPrior().sample_task(RngStream(1).derive("t"), 8, 2)
    record = task_to_record(task)
    assert record["spec"] is None
    assert_tasks_equal(task_from_record(record), task)


def test_record_validation():
    task = sample_tasks(1)[0]
    record = task_to_record(task)
    bad = dict(record)
    bad["event"] = record["event"][:-1]
    with pytest.raises(DataError):
        task_from_record(bad)
    bad = dict(record)
    bad["n_ctx"] = len(record["event"]) + 1
    with pytest.raises(DataError):
        task_from_record(bad)


def test_jsonl_round_trip(tmp_path):
    tasks = sample_tasks(4)
    path = tmp_path / "corpus.jsonl"
    assert write_jsonl(path, tasks) == 4
    back = read_jsonl(path)
    assert len(back) == 4
    for a, b in zip(tasks, back):
        assert_tasks_equal(a, b)


def test_jsonl_bytes_are_canonical(tmp_path):
    tasks = sample_tasks(3, seed=9)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(a, tasks)
    write_jsonl(b, sample_tasks(3, seed=9))
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert len(lines) == 3
    for line in lines:
        json.loads(line)  # every line is standalone JSON


def test_jsonl_skips_blank_lines(tmp_path):
    tasks = sample_tasks(2)
    path = tmp_path / "corpus.jsonl"
    write_jsonl(path, tasks)
    path.write_text(path.read_text() + "\n\n")
    assert len(read_jsonl(path)) == 2


def test_binary_round_trip(tmp_path):
    tasks = sample_tasks(5, seed=2)
    path = tmp_path / "corpus.spfntask"
    assert write_binary(path, tasks) == 5
    back = read_binary(path)
    assert len(back) == 5
    for a, b in zip(tasks, back):
        assert_tasks_equal(a, b)


def test_binary_bytes_are_canonical(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_binary(a, sample_tasks(3, seed=4))
    write_binary(b, sample_tasks(3, seed=4))
    assert a.read_bytes() == b.read_bytes()


def test_binary_floats_survive_exactly(tmp_path):
    # JSONL uses repr round-tripping; the binary path stores raw f64s.
    # Both must reproduce awkward floats bit-for-bit.
    tasks = sample_tasks(2, seed=7)
    jpath, bpath = tmp_path / "c.jsonl", tmp_path / "c.bin"
    write_jsonl(jpath, tasks)
    write_binary(bpath, tasks)
    for back in (read_jsonl(jpath), read_binary(bpath)):
        for a, b in zip(tasks, back):
            assert_tasks_equal(a, b)


def test_binary_rejects_corruption(tmp_path):
    path = tmp_path / "corpus.spfntask"
    write_binary(path, sample_tasks(2))
    blob = path.read_bytes()
    bad_magic = tmp_path / "m.spfntask"
    bad_magic.write_bytes(b"NOTATASK" + blob[8:])
    with pytest.raises(DataError, match="magic"):
        read_binary(bad_magic)
    bad_version = tmp_path / "v.spfntask"
    bad_version.write_bytes(blob[:8] + b"\x63\x00\x00\x00" + blob[12:])
    with pytest.raises(DataError, match="version"):
        read_binary(bad_version)
    trailing = tmp_path / "t.spfntask"
    trailing.write_bytes(blob + b"\x00")
    with pytest.raises(DataError, match="trailing"):
        read_binary(trailing)
