"""Model snapshots: a zip of ``.npy`` arrays plus a ``meta.json`` header.

Entries are written in sorted order with a fixed timestamp and no
compression, so the same state always serializes to the same bytes. A
snapshot carries everything needed to resume training bit-for-bit: online
and momentum parameters, SGD velocity, the queue, progress counters, the
metrics log so far and the config (with its hash).
"""
from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, from_dict
from .encoder import EncoderState
from .errors import IoError, SnapshotError
from .task_queue import MomentumQueue

FORMAT = "psco-snapshot"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Snapshot:
    state: EncoderState
    config: TrainConfig | None = None
    velocity: dict | None = None
    queue: MomentumQueue | None = None
    epoch: int = 0
    global_step: int = 0
    log: list = field(default_factory=list)


def _npy(arr) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def snapshot_bytes(snap: Snapshot) -> bytes:
    st = snap.state
    entries = {}
    for group, params in (("theta", st.theta), ("phi", st.phi), ("velocity", snap.velocity or {})):
        for k, v in params.items():
            entries[f"{group}/{k}.npy"] = _npy(v)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "layer_dims": st.layer_dims,
        "activation": st.activation,
        "config": snap.config.to_dict() if snap.config else None,
        "config_hash": snap.config.config_hash() if snap.config else None,
        "epoch": snap.epoch,
        "global_step": snap.global_step,
        # every random stream is derived from (seed, counter); this is the whole RNG state
        "rng": {"seed": snap.config.seed if snap.config else None, "global_step": snap.global_step},
        "log": snap.log,
        "queue": None,
    }
    if snap.queue is not None:
        meta["queue"] = {"head": snap.queue.head, "initialized_count": snap.queue.initialized_count}
        entries["queue/slots.npy"] = _npy(snap.queue.slots)
        entries["queue/true_labels.npy"] = _npy(snap.queue.true_labels)
    entries["meta.json"] = json.dumps(meta, sort_keys=True, default=list).encode()

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    return buf.getvalue()


def save_model(path, state: EncoderState, *, config=None, velocity=None, queue=None,
               epoch=0, global_step=0, log=None):
    data = snapshot_bytes(Snapshot(state, config, velocity, queue, epoch, global_step, list(log or [])))
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write snapshot {path}: {exc.strerror}") from None


def _load_group(zf, prefix):
    out = {}
    for name in zf.namelist():
        if name.startswith(prefix + "/"):
            key = name[len(prefix) + 1:-len(".npy")]
            out[key] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return out


def load_model(path, expected_config: TrainConfig | None = None, expected_dims: dict | None = None) -> Snapshot:
    try:
        zf = zipfile.ZipFile(path)
    except FileNotFoundError:
        raise IoError(f"snapshot {path} does not exist") from None
    except (zipfile.BadZipFile, OSError) as exc:
        raise SnapshotError(f"{path} is not a snapshot: {exc}") from None
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise SnapshotError(f"{path} has no meta.json") from None
        if meta.get("format") != FORMAT or meta.get("version") != VERSION:
            raise SnapshotError(f"unsupported snapshot format {meta.get('format')!r} v{meta.get('version')}")
        theta, phi, velocity = _load_group(zf, "theta"), _load_group(zf, "phi"), _load_group(zf, "velocity")
        queue = None
        if meta["queue"] is not None:
            queue = MomentumQueue(
                np.lib.format.read_array(io.BytesIO(zf.read("queue/slots.npy"))),
                np.lib.format.read_array(io.BytesIO(zf.read("queue/true_labels.npy"))),
                meta["queue"]["head"],
                meta["queue"]["initialized_count"],
            )

    dims = {k: list(v) for k, v in meta["layer_dims"].items()}
    if expected_dims is not None and {k: list(v) for k, v in expected_dims.items()} != dims:
        raise SnapshotError(f"snapshot layer dims {dims} differ from expected {expected_dims}")
    for name, W in theta.items():
        stage, i, kind = name.split(".")
        fan_in, fan_out = dims[stage][int(i)], dims[stage][int(i) + 1]
        want = (fan_in, fan_out) if kind == "weight" else (fan_out,)
        if W.shape != want or (name in phi and phi[name].shape != want):
            raise SnapshotError(f"parameter {name} has shape {W.shape}, layer dims imply {want}")

    config = from_dict(meta["config"]) if meta["config"] else None
    if config is not None and config.config_hash() != meta["config_hash"]:
        raise SnapshotError("stored config does not match its hash")
    if expected_config is not None and expected_config.config_hash() != meta["config_hash"]:
        raise SnapshotError("snapshot was produced with a different config")
    state = EncoderState(theta, phi, dims, meta["activation"])
    return Snapshot(state, config, velocity or None, queue, meta["epoch"], meta["global_step"], meta["log"])


def save_trainer(path, trainer):
    save_model(path, trainer.state, config=trainer.cfg, velocity=trainer.velocity, queue=trainer.queue,
               epoch=trainer.epoch, global_step=trainer.global_step, log=trainer.log)


def load_trainer(path, dataset, expected_config: TrainConfig | None = None):
    """Rebuild a Trainer from a snapshot so that ``fit`` continues where it stopped."""
    from .trainer import LOG_FIELDS, Trainer

    snap = load_model(path, expected_config)
    if snap.config is None or snap.queue is None or snap.velocity is None:
        raise SnapshotError("snapshot lacks the training state needed to resume")
    trainer = Trainer(snap.config, dataset, state=snap.state)
    trainer.queue = snap.queue
    trainer.velocity = snap.velocity
    trainer.epoch = snap.epoch
    trainer.global_step = snap.global_step
    # meta.json stores records with sorted keys; restore the logging order
    trainer.log = [{k: rec[k] for k in LOG_FIELDS} for rec in snap.log]
    return trainer
