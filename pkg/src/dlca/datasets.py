"""Labelled photocurrent datasets: generation, preprocessing, splitting, storage."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import container
from .container import FormatError
from .dynamics import (
    DEFAULT_BIN_FACTOR,
    ChannelParams,
    MeasurementWindow,
    derive_seed,
    simulate_batch,
)
from .qcore import PureState, feedback_operator, measurement_operator

MAGIC = b"DLCADSET"
FORMAT_VERSION = 1
GENERATOR_VERSION = "dlca-sme-kraus/1"

__all__ = [
    "DatasetMetadata", "PhotocurrentDataset", "Standardizer", "FormatError", "generate_dataset",
    "fit_standardizer", "preprocess", "split", "save", "load", "export_csv", "label_seed", "trajectory_seed",
]


@dataclass(frozen=True)
class DatasetMetadata:
    params: ChannelParams
    theta: float
    window: MeasurementWindow
    bin_factor: int = DEFAULT_BIN_FACTOR
    master_seed: int = 0
    generator_version: str = GENERATOR_VERSION
    phi: float | None = None
    transforms: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transforms"] = list(self.transforms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMetadata":
        return cls(ChannelParams(**d["params"]), float(d["theta"]), MeasurementWindow(**d["window"]),
                   int(d["bin_factor"]), int(d["master_seed"]), str(d["generator_version"]),
                   d.get("phi"), tuple(d.get("transforms", ())))


@dataclass
class PhotocurrentDataset:
    """``labels[i]`` in 0..3 (|0>, |1>, |+>, |->) with current ``currents[i]``."""

    metadata: DatasetMetadata
    labels: np.ndarray
    currents: np.ndarray
    sample_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.currents = np.asarray(self.currents, dtype=np.float64)
        if self.currents.ndim != 2 or len(self.currents) != len(self.labels):
            raise ValueError("currents must be a (n, length) array with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 3):
            raise ValueError("labels must lie in 0..3")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return int(self.labels[i]), self.currents[i]

    @property
    def seq_len(self) -> int:
        return self.currents.shape[1]

    def subset(self, idx) -> "PhotocurrentDataset":
        idx = np.asarray(idx)
        ids = self.sample_ids[idx] if self.sample_ids is not None else None
        return PhotocurrentDataset(self.metadata, self.labels[idx], self.currents[idx], ids)

    def equals(self, other: "PhotocurrentDataset") -> bool:
        return (self.metadata == other.metadata and np.array_equal(self.labels, other.labels)
                and self.currents.shape == other.currents.shape
                and self.currents.tobytes() == other.currents.tobytes())


# -- generation ---------------------------------------------------------------------

def label_seed(master_seed: int, i: int) -> int:
    return derive_seed(master_seed, i, 0)


def trajectory_seed(master_seed: int, i: int) -> int:
    return derive_seed(master_seed, i)


def _labels(master_seed, lo, hi):
    return np.array([np.random.default_rng(label_seed(master_seed, i)).integers(4) for i in range(lo, hi)],
                    dtype=np.int64)


def _generate_chunk(args):
    lo, hi, params, theta, phi, window, master_seed, bin_factor = args
    labels = _labels(master_seed, lo, hi)
    seeds = [trajectory_seed(master_seed, i) for i in range(lo, hi)]
    f = feedback_operator(phi) if phi is not None else None
    res = simulate_batch([PureState.from_index(k) for k in labels], params, measurement_operator(theta),
                         window, seeds, bin_factor, f=f)
    return labels, res.currents


def generate_dataset(n: int, params: ChannelParams, theta: float, window: MeasurementWindow | None = None,
                     master_seed: int = 0, bin_factor: int = DEFAULT_BIN_FACTOR, phi: float | None = None,
                     workers: int = 1, chunk: int = 4096) -> PhotocurrentDataset:
    """Simulate ``n`` labelled photocurrents with ``e = cos(theta) X + sin(theta) Z``.

    Sample ``i`` gets its label from ``label_seed(master_seed, i)`` and its
    noise from ``trajectory_seed(master_seed, i)``; output is bit-identical for
    any ``workers``/``chunk``.  ``phi`` switches on Markovian feedback.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    window = window or MeasurementWindow.full(params)
    window.step_range(params, bin_factor)
    jobs = [(lo, min(n, lo + chunk), params, theta, phi, window, master_seed, bin_factor)
            for lo in range(0, n, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_generate_chunk, jobs))
    else:
        parts = [_generate_chunk(j) for j in jobs]
    labels = np.concatenate([p[0] for p in parts])
    currents = np.concatenate([p[1] for p in parts])
    meta = DatasetMetadata(params, float(theta), window, bin_factor, int(master_seed), GENERATOR_VERSION, phi)
    return PhotocurrentDataset(meta, labels, currents, np.arange(n))


# -- preprocessing ------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """Global scalar standardisation fitted on a training split."""

    mean: float
    std: float
    length: int | None = None

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("standardizer needs std > 0")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def fit_standardizer(train: PhotocurrentDataset) -> Standardizer:
    if len(train) == 0:
        raise ValueError("cannot fit a standardizer on an empty dataset")
    x = train.currents
    mean = float(x.mean())
    std = float(x.std())
    if not std > 0 or not math.isfinite(std):
        raise ValueError("training currents have zero variance")
    return Standardizer(mean, std, train.seq_len)


def preprocess(ds: PhotocurrentDataset, s: Standardizer) -> PhotocurrentDataset:
    """Standardise with ``s`` and reverse the time axis."""
    if s.length is not None and ds.seq_len != s.length:
        raise ValueError(f"sequence length {ds.seq_len} does not match standardizer length {s.length}")
    x = s.apply(ds.currents)[:, ::-1].copy()
    meta = replace(ds.metadata, transforms=ds.metadata.transforms
                   + (f"standardize(mean={s.mean!r},std={s.std!r})", "flip_time"))
    return PhotocurrentDataset(meta, ds.labels.copy(), x, ds.sample_ids)


def split(ds: PhotocurrentDataset, train_fraction: float = 0.9, seed: int = 0):
    """Seeded shuffle then split into ``(train, test)``."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n_train = int(round(train_fraction * len(ds)))
    if n_train == 0 or n_train == len(ds):
        raise ValueError(f"split of {len(ds)} samples at {train_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


# -- persistence --------------------------------------------------------------------

def save(ds: PhotocurrentDataset, path, run: dict | None = None):
    """Write ``ds``; ``run`` (command, config, version) is stored alongside the metadata."""
    n, T = ds.currents.shape
    rec = np.empty(n, dtype=[("label", "u1"), ("x", "<f8", (T,))])
    rec["label"] = ds.labels
    rec["x"] = ds.currents
    meta = {"metadata": ds.metadata.to_dict(), "n": n, "seq_len": T}
    if run is not None:
        meta["run"] = run
    container.write(path, MAGIC, FORMAT_VERSION, meta, rec.tobytes())


def load(path) -> PhotocurrentDataset:
    meta, payload = container.read(path, MAGIC, FORMAT_VERSION)
    try:
        n, T = int(meta["n"]), int(meta["seq_len"])
        md = DatasetMetadata.from_dict(meta["metadata"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed metadata ({exc})") from exc
    dt = np.dtype([("label", "u1"), ("x", "<f8", (T,))])
    if len(payload) != n * dt.itemsize:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, expected {n * dt.itemsize}")
    if md.generator_version != GENERATOR_VERSION:
        warnings.warn(f"{path} was written by generator {md.generator_version!r}, "
                      f"this build is {GENERATOR_VERSION!r}", stacklevel=2)
    rec = np.frombuffer(payload, dtype=dt, count=n)
    return PhotocurrentDataset(md, rec["label"].astype(np.int64), rec["x"].astype(np.float64))


def export_csv(ds: PhotocurrentDataset, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ds.metadata.to_dict()}\n")
        w = csv.writer(fh)
        w.writerow(["label"] + [f"t{j}" for j in range(ds.seq_len)])
        for lab, row in zip(ds.labels, ds.currents):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])
