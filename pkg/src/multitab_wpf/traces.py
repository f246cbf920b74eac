"""Trace and dataset model, on-disk formats, and model-input conversion.

A trace is one browsing session: a packet direction sequence (+1 outgoing,
-1 incoming), the matching packet times in seconds relative to the first
packet, and a multi-hot label vector over the class catalog.

Datasets are stored as a directory holding ``manifest.json`` (class catalog,
split tag, optional unmonitored sentinel) and ``records.ndjson`` with one
trace per line::

    {"dirs": [1, -1], "ts": [0.0, 0.4], "labels": ["pageA"]}
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_NAME = "multitab-wpf-dataset"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
RECORDS = "records.ndjson"
DEFAULT_INPUT_DIM = 10_000
DEFAULT_MIN_PACKETS = 1_000
SPLIT_TAGS = ("train", "validation", "test")


class DatasetError(Exception):
    """Base class for dataset loading and validation failures."""


class DatasetParseError(DatasetError):
    pass


class CatalogError(DatasetError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trace:
    """One browsing session.

    Arrays are converted to ``int8`` / ``float64`` / ``uint8`` and made
    read-only. Construction does not check invariants; use
    :meth:`problems` or :meth:`check`.
    """

    directions: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray
    origin: str = "original"

    def __post_init__(self):
        d = np.array(self.directions, dtype=np.int8).reshape(-1)
        t = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        y = np.array(self.labels, dtype=np.uint8).reshape(-1)
        object.__setattr__(self, "directions", _frozen(d))
        object.__setattr__(self, "timestamps", _frozen(t))
        object.__setattr__(self, "labels", _frozen(y))

    def __len__(self) -> int:
        return len(self.directions)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            np.array_equal(self.directions, other.directions)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.labels, other.labels)
            and self.origin == other.origin
        )

    __hash__ = None

    @property
    def label_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels)

    def problems(self, *, zero_start: bool = True, require_label: bool = True) -> list[str]:
        """Return the invariant violations of this trace (empty if valid)."""
        out = []
        if len(self.directions) != len(self.timestamps):
            out.append(
                f"length mismatch: {len(self.directions)} directions, "
                f"{len(self.timestamps)} timestamps"
            )
            return out
        if not np.all(np.abs(self.directions) == 1):
            out.append("direction not in {+1, -1}")
        ts = self.timestamps
        if len(ts):
            if not np.all(np.isfinite(ts)):
                out.append("non-finite timestamp")
            elif np.any(np.diff(ts) < 0):
                out.append("timestamps not monotone")
            elif ts[0] < 0:
                out.append("negative timestamp")
            elif zero_start and ts[0] != 0:
                out.append("timestamps not relative to first packet")
        if not np.all(self.labels <= 1):
            out.append("labels not multi-hot")
        elif require_label and not self.labels.any():
            out.append("no label set")
        return out

    def check(self, **kwargs) -> "Trace":
        bad = self.problems(**kwargs)
        if bad:
            raise DatasetError("; ".join(bad))
        return self


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of traces plus the class catalog.

    If ``unmonitored`` is set it names the sentinel class, which is always
    the last catalog entry.
    """

    traces: tuple[Trace, ...]
    class_catalog: tuple[str, ...]
    split_tag: str = "train"
    unmonitored: str | None = None
    rejected: tuple[tuple[int, str], ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "class_catalog", tuple(self.class_catalog))
        if len(set(self.class_catalog)) != len(self.class_catalog):
            raise CatalogError("class_catalog entries must be unique")
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        if self.unmonitored is not None and (
            not self.class_catalog or self.class_catalog[-1] != self.unmonitored
        ):
            raise CatalogError("the unmonitored sentinel must be the last catalog entry")
        width = len(self.class_catalog)
        for i, tr in enumerate(self.traces):
            if len(tr.labels) != width:
                raise CatalogError(
                    f"trace {i}: label width {len(tr.labels)} != catalog size {width}"
                )

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def __getitem__(self, i):
        return self.traces[i]

    @property
    def n_classes(self) -> int:
        """Label width, including the unmonitored sentinel if present."""
        return len(self.class_catalog)

    @property
    def n_monitored(self) -> int:
        return self.n_classes - (self.unmonitored is not None)

    def label_matrix(self) -> np.ndarray:
        if not self.traces:
            return np.zeros((0, self.n_classes), dtype=np.uint8)
        return np.stack([t.labels for t in self.traces])

    def model_inputs(self, d_i: int = DEFAULT_INPUT_DIM) -> np.ndarray:
        """Stack of padded/truncated direction vectors, shape ``(N, d_i)``."""
        out = np.zeros((len(self.traces), d_i), dtype=np.float32)
        for row, tr in zip(out, self.traces):
            n = min(len(tr), d_i)
            row[:n] = tr.directions[:n]
        return out

    def with_traces(self, traces: Iterable[Trace], **changes) -> "Dataset":
        return replace(self, traces=tuple(traces), rejected=(), **changes)

    def label_names(self, trace: Trace) -> list[str]:
        return [self.class_catalog[j] for j in trace.label_indices]

    def encode_labels(self, names: Sequence[str]) -> np.ndarray:
        index = {c: j for j, c in enumerate(self.class_catalog)}
        y = np.zeros(self.n_classes, dtype=np.uint8)
        for name in names:
            if name not in index:
                raise CatalogError(f"unknown label id {name!r}")
            y[index[name]] = 1
        return y


def to_model_input(trace: Trace, d_i: int = DEFAULT_INPUT_DIM) -> np.ndarray:
    """Zero-padded (or truncated) direction vector of length ``d_i``."""
    if d_i <= 0:
        raise ValueError("d_i must be positive")
    out = np.zeros(d_i, dtype=np.float32)
    n = min(len(trace), d_i)
    out[:n] = trace.directions[:n]
    return out


def filter_short(dataset: Dataset, min_packets: int = DEFAULT_MIN_PACKETS) -> Dataset:
    """Drop traces with fewer than ``min_packets`` packets, keeping order."""
    if min_packets < 0:
        raise ValueError("min_packets must be >= 0")
    kept = [t for t in dataset.traces if len(t) >= min_packets]
    if dataset.traces and not kept:
        warnings.warn(
            f"filter_short: all {len(dataset)} traces are shorter than {min_packets} packets",
            stacklevel=2,
        )
    return dataset.with_traces(kept)


def split_dataset(
    dataset: Dataset,
    ratios: Sequence[float] = (8, 1, 1),
    seed: int = 0,
    by_combination: bool = False,
) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/validation/test split.

    With ``by_combination`` every trace sharing a label set lands in the same
    split, so the test set holds only unseen webpage combinations.
    """
    r = np.asarray(ratios, dtype=float)
    if r.shape != (3,) or np.any(r < 0) or r.sum() <= 0:
        raise ValueError("ratios must be three non-negative numbers")
    rng = np.random.default_rng(seed)
    if by_combination:
        groups: dict[bytes, list[int]] = {}
        for i, t in enumerate(dataset.traces):
            groups.setdefault(t.labels.tobytes(), []).append(i)
        units = list(groups.values())
    else:
        units = [[i] for i in range(len(dataset))]
    order = rng.permutation(len(units))
    bounds = np.floor(np.cumsum(r / r.sum()) * len(units) + 1e-9).astype(int)
    parts = np.split(order, bounds[:2])
    out = []
    for tag, part in zip(SPLIT_TAGS, parts):
        idx = sorted(i for u in part for i in units[u])
        out.append(dataset.with_traces([dataset.traces[i] for i in idx], split_tag=tag))
    return tuple(out)


# --------------------------------------------------------------------------
# on-disk formats


def _manifest(dataset: Dataset, records: str) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "class_catalog": list(dataset.class_catalog),
        "unmonitored": dataset.unmonitored,
        "split_tag": dataset.split_tag,
        "records": records,
        "n_traces": len(dataset),
    }


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``dataset`` as a manifest + ndjson directory. Returns the directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / RECORDS, "w") as f:
        for tr in dataset.traces:
            rec = {
                "dirs": tr.directions.tolist(),
                "ts": tr.timestamps.tolist(),
                "labels": dataset.label_names(tr),
            }
            if tr.origin != "original":
                rec["origin"] = tr.origin
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(path / MANIFEST, "w") as f:
        json.dump(_manifest(dataset, RECORDS), f, indent=2)
        f.write("\n")
    return path


def _read_manifest(path: Path) -> dict:
    try:
        with open(path) as f:
            man = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"{path}: bad manifest: {e}") from None
    if man.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise DatasetParseError(f"{path}: unknown format {man.get('format')!r}")
    if int(man.get("version", FORMAT_VERSION)) > FORMAT_VERSION:
        raise DatasetParseError(f"{path}: unsupported version {man['version']}")
    return man


class _LabelMapper:
    def __init__(self, catalog, unmonitored, map_unknown):
        self.fixed = catalog is not None
        self.catalog = list(catalog or [])
        self.unmonitored = unmonitored
        self.map_unknown = map_unknown
        if map_unknown and unmonitored is None:
            raise CatalogError("map_unknown_to_unmonitored needs an unmonitored sentinel")
        self.index = {c: j for j, c in enumerate(self.catalog)}

    def __call__(self, names, where: str) -> list[int]:
        out = []
        for name in names:
            if not isinstance(name, str):
                raise DatasetParseError(f"{where}: label ids must be strings, got {name!r}")
            j = self.index.get(name)
            if j is None:
                if self.map_unknown:
                    j = self.index[self.unmonitored]
                elif self.fixed:
                    raise CatalogError(f"{where}: unknown label id {name!r}")
                else:
                    j = self.index[name] = len(self.catalog)
                    self.catalog.append(name)
            out.append(j)
        return out


def _finish(raw, mapper: _LabelMapper, split_tag, unmonitored) -> Dataset:
    catalog = mapper.catalog
    if unmonitored is not None and catalog[-1] != unmonitored:
        # inferred catalogs keep the sentinel last
        catalog = [c for c in catalog if c != unmonitored] + [unmonitored]
    remap = {c: j for j, c in enumerate(catalog)}
    old = mapper.catalog
    traces, rejected = [], []
    for where, dirs, ts, label_idx, origin in raw:
        y = np.zeros(len(catalog), dtype=np.uint8)
        y[[remap[old[j]] for j in label_idx]] = 1
        tr = Trace(dirs, ts, y, origin=origin)
        bad = tr.problems()
        if bad:
            rejected.append((where, "; ".join(bad)))
            logger.warning("rejected record %s: %s", where, "; ".join(bad))
            continue
        traces.append(tr)
    return Dataset(tuple(traces), tuple(catalog), split_tag, unmonitored, tuple(rejected))


def _parse_ndjson(path: Path, mapper: _LabelMapper):
    raw = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"{where}: {e.msg} at column {e.colno}") from None
            if not isinstance(rec, dict):
                raise DatasetParseError(f"{where}: record must be an object")
            dirs = rec.get("dirs", rec.get("directions"))
            ts = rec.get("ts", rec.get("timestamps"))
            labels = rec.get("labels")
            if dirs is None or ts is None or labels is None:
                raise DatasetParseError(f"{where}: record needs dirs, ts and labels")
            try:
                dirs = np.asarray(dirs, dtype=np.int8)
                ts = np.asarray(ts, dtype=np.float64)
            except (TypeError, ValueError, OverflowError) as e:
                raise DatasetParseError(f"{where}: {e}") from None
            if dirs.ndim != 1 or ts.ndim != 1:
                raise DatasetParseError(f"{where}: dirs and ts must be flat lists")
            raw.append((lineno, dirs, ts, mapper(labels, where), rec.get("origin", "original")))
    return raw


def _parse_csv_dir(path: Path, mapper: _LabelMapper):
    index_file = path / "labels.csv"
    if not index_file.exists():
        raise DatasetParseError(f"{path}: csv-dir needs labels.csv")
    raw = []
    with open(index_file, newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), 2):
            where = f"labels.csv:{lineno}"
            if not row.get("file") or row.get("labels") is None:
                raise DatasetParseError(f"{where}: needs 'file' and 'labels' columns")
            names = [s for s in row["labels"].split(";") if s]
            label_idx = mapper(names, where)
            times, dirs = [], []
            trace_file = path / row["file"]
            if not trace_file.exists():
                raise DatasetParseError(f"{where}: missing trace file {row['file']}")
            with open(trace_file, newline="") as tf:
                for off, trow in enumerate(csv.reader(tf), 1):
                    if not trow or trow[0].startswith("#") or trow[0] == "timestamp":
                        continue
                    try:
                        times.append(float(trow[0]))
                        dirs.append(int(float(trow[1])))
                    except (ValueError, IndexError):
                        raise DatasetParseError(f"{row['file']}:{off}: bad row {trow!r}") from None
            raw.append((lineno, np.asarray(dirs), np.asarray(times), label_idx, "original"))
    return raw


def load_dataset(
    path: str | Path,
    format: str = "ndjson",
    *,
    catalog: Sequence[str] | None = None,
    unmonitored: str | None = None,
    split_tag: str | None = None,
    map_unknown_to_unmonitored: bool = False,
) -> Dataset:
    """Load a dataset from disk.

    ``path`` is either a dataset directory (with ``manifest.json``) or, for
    ndjson, a bare records file whose catalog is inferred from the labels in
    order of first appearance. Records that violate trace invariants are
    dropped and listed in ``Dataset.rejected``.

    Raises :class:`DatasetParseError` on malformed records (naming the line)
    and :class:`CatalogError` on label ids missing from a fixed catalog.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no dataset at {path}")
    man = {}
    if path.is_dir() and (path / MANIFEST).exists():
        man = _read_manifest(path / MANIFEST)
    if catalog is None and "class_catalog" in man:
        catalog = man["class_catalog"]
    if unmonitored is None:
        unmonitored = man.get("unmonitored")
    if catalog is not None and unmonitored is not None and unmonitored not in catalog:
        catalog = list(catalog) + [unmonitored]
    if catalog is None and unmonitored is not None:
        catalog = [unmonitored] if map_unknown_to_unmonitored else None
        if catalog is None:
            raise CatalogError("an unmonitored sentinel needs an explicit catalog")
    split_tag = split_tag or man.get("split_tag", "train")
    mapper = _LabelMapper(catalog, unmonitored, map_unknown_to_unmonitored)

    if format == "ndjson":
        records = path / man.get("records", RECORDS) if path.is_dir() else path
        raw = _parse_ndjson(records, mapper)
    elif format == "csv-dir":
        if not path.is_dir():
            raise DatasetParseError(f"{path}: csv-dir format needs a directory")
        raw = _parse_csv_dir(path, mapper)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    return _finish(raw, mapper, split_tag, unmonitored)
