"""Raw float32 tensor datasets with a JSON manifest, and the synthetic generator.

On disk a dataset is three files: ``<name>.f32`` (little-endian float32,
row-major ``n_samples x dim``), optionally ``<name>.labels.i32``
(little-endian int32), and ``<name>.json`` (the manifest). The manifest
checksum is the SHA-256 of the data bytes followed by the label bytes.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import special_ortho_group

from .errors import ConfigError, DataError, FormatError, IntegrityError, IoError, UsageError

MANIFEST_FIELDS = {"name", "kind", "n_samples", "dim", "height", "width", "labels_present",
                   "data_file", "labels_file", "checksum"}


@dataclass
class Dataset:
    x: np.ndarray  # (n, dim) float64
    labels: np.ndarray | None = None
    kind: str = "vector"
    image_shape: tuple | None = None
    name: str = "dataset"

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def classes(self):
        if self.labels is None:
            raise DataError(f"dataset {self.name!r} has no labels")
        return np.unique(self.labels)


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    dim: int = 32
    samples_per_class: int = 512
    class_mean_scale: float = 6.0
    within_class_sigma: float = 1.0
    kind: str = "vector"  # "vector" | "image28"
    domain_shift: dict | None = None  # {"rotation_seed": int, "offset_scale": float}
    seed: int = 0
    # separate stream for the within-class noise: same classes, fresh samples
    sample_seed: int | None = None
    name: str = "synthetic"
    labels: bool = True

    def validate(self):
        if self.n_classes < 2 or self.within_class_sigma < 0 or self.class_mean_scale <= 0:
            raise ConfigError("need n_classes >= 2, within_class_sigma >= 0, class_mean_scale > 0")
        if self.kind not in ("vector", "image28"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "image28" and self.dim != 784:
            raise ConfigError("image28 datasets have dim 784")
        return self


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian class clusters around means on a sphere of radius ``class_mean_scale``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal((spec.n_classes, spec.dim))
    if spec.kind == "image28":
        # smooth templates so crops and flips keep class structure
        raw = np.stack([ndimage.gaussian_filter(r.reshape(28, 28), 2.0).reshape(-1) for r in raw])
    means = spec.class_mean_scale * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    if spec.sample_seed is not None:
        rng = np.random.default_rng([spec.seed, spec.sample_seed])
    x = means[labels] + spec.within_class_sigma * rng.standard_normal((labels.size, spec.dim))
    if spec.domain_shift:
        shift = spec.domain_shift
        rot_rng = np.random.default_rng(int(shift.get("rotation_seed", 0)))
        R = special_ortho_group.rvs(spec.dim, random_state=rot_rng)
        offset = rot_rng.standard_normal(spec.dim)
        offset *= float(shift.get("offset_scale", 0.0)) / np.linalg.norm(offset)
        x = x @ R + offset
    image_shape = (28, 28) if spec.kind == "image28" else None
    return Dataset(x.astype(np.float32).astype(np.float64), labels if spec.labels else None,
                   spec.kind, image_shape, spec.name)


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None


def save_dataset(ds: Dataset, out_dir, name=None) -> str:
    """Write data, labels and manifest; returns the manifest path."""
    name = name or ds.name
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc.strerror}") from None
    data_bytes = np.ascontiguousarray(ds.x, dtype="<f4").tobytes()
    label_bytes = b"" if ds.labels is None else np.ascontiguousarray(ds.labels, dtype="<i4").tobytes()
    manifest = {
        "name": name,
        "kind": ds.kind,
        "n_samples": int(ds.x.shape[0]),
        "labels_present": ds.labels is not None,
        "data_file": f"{name}.f32",
        "labels_file": f"{name}.labels.i32" if ds.labels is not None else None,
        "checksum": hashlib.sha256(data_bytes + label_bytes).hexdigest(),
    }
    if ds.kind == "image28":
        manifest["height"], manifest["width"] = ds.image_shape or (28, 28)
    else:
        manifest["dim"] = int(ds.x.shape[1])
    _atomic_write(os.path.join(out_dir, manifest["data_file"]), data_bytes)
    if ds.labels is not None:
        _atomic_write(os.path.join(out_dir, manifest["labels_file"]), label_bytes)
    path = os.path.join(out_dir, f"{name}.json")
    _atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def generate_synthetic(spec: SyntheticSpec, out_dir) -> str:
    return save_dataset(make_synthetic(spec), out_dir, spec.name)


def _read(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from None


def load_dataset(manifest_path) -> Dataset:
    try:
        manifest = json.loads(_read(manifest_path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    unknown = set(manifest) - MANIFEST_FIELDS
    if unknown:
        raise FormatError(f"unknown manifest field(s) {sorted(unknown)}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    n = int(manifest["n_samples"])
    if manifest["kind"] == "image28":
        shape = (int(manifest["height"]), int(manifest["width"]))
        dim = shape[0] * shape[1]
    elif manifest["kind"] == "vector":
        shape, dim = None, int(manifest["dim"])
    else:
        raise FormatError(f"unknown dataset kind {manifest['kind']!r}")

    data_bytes = _read(os.path.join(base, manifest["data_file"]))
    if len(data_bytes) != n * dim * 4:
        raise FormatError(f"data file holds {len(data_bytes)} bytes, expected {n * dim * 4}")
    label_bytes = b""
    if manifest["labels_present"]:
        label_bytes = _read(os.path.join(base, manifest["labels_file"]))
        if len(label_bytes) != n * 4:
            raise FormatError(f"labels file holds {len(label_bytes)} bytes, expected {n * 4}")
    if hashlib.sha256(data_bytes + label_bytes).hexdigest() != manifest["checksum"]:
        raise IntegrityError(f"checksum mismatch for {manifest_path}")

    x = np.frombuffer(data_bytes, dtype="<f4").reshape(n, dim).astype(np.float64)
    labels = np.frombuffer(label_bytes, dtype="<i4").astype(np.int64) if manifest["labels_present"] else None
    return Dataset(x, labels, manifest["kind"], shape, manifest["name"])


def read_synthetic_spec(path) -> tuple[SyntheticSpec, str | None]:
    """Parse a ``[synthetic]`` INI section; returns the spec and its ``out_dir`` (if set)."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        if not parser.read(path):
            raise UsageError(f"cannot read spec file {path}")
    except configparser.Error as exc:
        raise UsageError(f"malformed spec file: {exc}".splitlines()[0]) from None
    if parser.sections() != ["synthetic"]:
        raise UsageError("spec file must contain exactly one [synthetic] section")
    items = dict(parser.items("synthetic"))
    spec = SyntheticSpec()
    out_dir = items.pop("out_dir", None)
    shift = {}
    for key, raw in items.items():
        if key in ("rotation_seed", "offset_scale"):
            shift[key] = float(raw) if key == "offset_scale" else int(raw)
        elif key in ("n_classes", "dim", "samples_per_class", "seed", "sample_seed"):
            setattr(spec, key, int(raw))
        elif key in ("class_mean_scale", "within_class_sigma"):
            setattr(spec, key, float(raw))
        elif key in ("kind", "name"):
            setattr(spec, key, raw.strip())
        elif key == "labels":
            spec.labels = raw.strip().lower() in ("true", "1", "yes")
        else:
            raise UsageError(f"unknown key {key!r} in section [synthetic]")
    if shift:
        spec.domain_shift = shift
    if out_dir and not os.path.isabs(out_dir):
        out_dir = os.path.join(os.path.dirname(os.path.abspath(path)), out_dir)
    return spec.validate(), out_dir
