"""Task corpus serialization: JSONL for inspection, binary for bulk.

Both formats store the task recipe plus covariates and the latent
event/censor times; observed ``(t, delta)`` pairs are rebuilt as
``(min(E, C), 1{E <= C})`` on read, so a stored corpus cannot drift out
of sync with its latents.  Writers emit canonical bytes (sorted JSON
keys, fixed float repr, little-endian f64 payloads) so identical tasks
always produce identical files.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from typing import Iterable

import numpy as np

from .data import SurvivalDataset
from .errors import DataError
from .prior import DgpSpec, TaskSample
from .tabular import MlpSpec

MAGIC = b"SPFNTASK"
VERSION = 1


def mlp_spec_to_dict(spec: MlpSpec) -> dict:
    return {
        "layer_widths": list(spec.layer_widths),
        "activations": list(spec.activations),
        "weight_seed": int(spec.weight_seed),
        "noise_std": float(spec.noise_std),
    }


def mlp_spec_from_dict(d: dict) -> MlpSpec:
    return MlpSpec(
        layer_widths=tuple(int(w) for w in d["layer_widths"]),
        activations=tuple(str(a) for a in d["activations"]),
        weight_seed=int(d["weight_seed"]),
        noise_std=float(d["noise_std"]),
    )


def dgp_spec_to_dict(spec: DgpSpec) -> dict:
    out = dataclasses.asdict(spec)
    out["covariate_spec"] = mlp_spec_to_dict(spec.covariate_spec)
    out["event_spec"] = mlp_spec_to_dict(spec.event_spec)
    out["censor_spec"] = None if spec.censor_spec is None else mlp_spec_to_dict(spec.censor_spec)
    return out


def dgp_spec_from_dict(d: dict) -> DgpSpec:
    kwargs = dict(d)
    kwargs["covariate_spec"] = mlp_spec_from_dict(d["covariate_spec"])
    kwargs["event_spec"] = mlp_spec_from_dict(d["event_spec"])
    kwargs["censor_spec"] = None if d["censor_spec"] is None else mlp_spec_from_dict(d["censor_spec"])
    return DgpSpec(**kwargs)


def task_to_record(task: TaskSample) -> dict:
    x = np.concatenate([task.context.x, task.x_query], axis=0)
    e = np.concatenate([task.latent_event_times, task.query_event_times])
    c = np.concatenate([task.latent_censor_times, task.query_censor_times])
    return {
        "spec": None if task.spec is None else dgp_spec_to_dict(task.spec),
        "n_ctx": task.n_ctx,
        "censor_scale": float(task.censor_scale),
        "x": x.tolist(),
        "event": e.tolist(),
        "censor": c.tolist(),
    }


def task_from_record(record: dict) -> TaskSample:
    x = np.asarray(record["x"], dtype=np.float64)
    e = np.asarray(record["event"], dtype=np.float64)
    c = np.asarray(record["censor"], dtype=np.float64)
    n_ctx = int(record["n_ctx"])
    if x.ndim != 2 or e.shape != (x.shape[0],) or c.shape != (x.shape[0],):
        raise DataError("corpus record arrays are inconsistent")
    if not 1 <= n_ctx <= x.shape[0]:
        raise DataError(f"corpus record has bad n_ctx {n_ctx}")
    t = np.minimum(e, c)
    delta = (e <= c).astype(np.int64)
    spec = None if record["spec"] is None else dgp_spec_from_dict(record["spec"])
    return TaskSample(
        context=SurvivalDataset(x[:n_ctx], t[:n_ctx], delta[:n_ctx]),
        x_query=x[n_ctx:],
        query_event_times=e[n_ctx:],
        query_censor_times=c[n_ctx:],
        latent_event_times=e[:n_ctx],
        latent_censor_times=c[:n_ctx],
        censor_scale=float(record["censor_scale"]),
        spec=spec,
    )


def write_jsonl(path, tasks: Iterable[TaskSample]) -> int:
    n = 0
    with open(path, "w") as f:
        for task in tasks:
            f.write(json.dumps(task_to_record(task), sort_keys=True, separators=(",", ":")))
            f.write("\n")
            n += 1
    return n


def read_jsonl(path) -> list[TaskSample]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(task_from_record(json.loads(line)))
    return out


def write_binary(path, tasks: Iterable[TaskSample]) -> int:
    """Binary corpus: 16-byte header, then length-prefixed meta + f64 payload."""
    tasks = list(tasks)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tasks)))
        for task in tasks:
            record = task_to_record(task)
            x = np.asarray(record.pop("x"), dtype="<f8")
            e = np.asarray(record.pop("event"), dtype="<f8")
            c = np.asarray(record.pop("censor"), dtype="<f8")
            record["n_rows"] = int(x.shape[0])
            record["d"] = int(x.shape[1])
            meta = json.dumps(record, sort_keys=True, separators=(",", ":")).encode()
            f.write(struct.pack("<I", len(meta)))
            f.write(meta)
            f.write(x.ravel().tobytes())
            f.write(e.tobytes())
            f.write(c.tobytes())
    return len(tasks)


def read_binary(path) -> list[TaskSample]:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16 or head[:8] != MAGIC:
            raise DataError(f"{path}: not a task corpus (bad magic)")
        version, count = struct.unpack("<II", head[8:])
        if version != VERSION:
            raise DataError(f"{path}: unsupported corpus version {version}")
        tasks = []
        for _ in range(count):
            (meta_len,) = struct.unpack("<I", f.read(4))
            record = json.loads(f.read(meta_len))
            n, d = int(record.pop("n_rows")), int(record.pop("d"))
            x = np.frombuffer(f.read(8 * n * d), dtype="<f8").reshape(n, d)
            record["x"] = x
            record["event"] = np.frombuffer(f.read(8 * n), dtype="<f8")
            record["censor"] = np.frombuffer(f.read(8 * n), dtype="<f8")
            tasks.append(task_from_record(record))
        if f.read(1):
            raise DataError(f"{path}: trailing bytes after the declared task count")
    return tasks
