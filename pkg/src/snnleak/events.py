"""Event ingestion, binning and synthetic event datasets.

Canonical event file layout (little-endian)::

    b"EVS1" | u32 channel_count | u32 event_count | event_count x (u64 time_us, u32 channel)

Manifests are JSON-lines, one ``{"path": ..., "label": int}`` per sample; relative
paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EventFormatError, MalformedInputError

MAGIC = b"EVS1"
HEADER = struct.Struct("<4sII")
RECORD_DTYPE = np.dtype([("time_us", "<u8"), ("channel", "<u4")])
US_PER_MS = 1000.0

DEFAULT_DT_MS = 14.0
# Step counts per dataset flavour; only dt is fixed by the experiments.
DEFAULT_STEPS = {"nmnist-like": 22, "shd-like": 100}


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted (time_us, channel) events of one sample."""

    channel_count: int
    time_us: np.ndarray
    channel: np.ndarray

    def __post_init__(self):
        if self.channel_count < 1:
            raise MalformedInputError(f"channel_count must be positive, got {self.channel_count}")
        t = np.asarray(self.time_us, dtype=np.int64).reshape(-1)
        c = np.asarray(self.channel, dtype=np.int64).reshape(-1)
        if t.shape != c.shape:
            raise MalformedInputError("time_us and channel lengths differ")
        if t.size:
            if t.min() < 0:
                raise MalformedInputError("negative timestamp")
            bad = np.flatnonzero((c < 0) | (c >= self.channel_count))
            if bad.size:
                i = int(bad[0])
                raise MalformedInputError(
                    f"event {i}: channel {int(c[i])} outside [0, {self.channel_count})"
                )
            unsorted = np.flatnonzero(np.diff(t) < 0)
            if unsorted.size:
                raise MalformedInputError(f"event {int(unsorted[0]) + 1}: timestamps not sorted")
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "time_us", t)
        object.__setattr__(self, "channel", c)

    @classmethod
    def from_events(cls, channel_count: int, events: Iterable[tuple[int, int]]) -> "EventStream":
        ev = list(events)
        if not ev:
            return cls(channel_count, np.zeros(0, np.int64), np.zeros(0, np.int64))
        t, c = zip(*ev)
        return cls(channel_count, np.array(t, np.int64), np.array(c, np.int64))

    def __len__(self) -> int:
        return int(self.time_us.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.channel_count == other.channel_count
            and np.array_equal(self.time_us, other.time_us)
            and np.array_equal(self.channel, other.channel)
        )


@dataclass(frozen=True, eq=False)
class SpikeRaster:
    """Binary T x C spike matrix sampled every ``dt_ms``."""

    bits: np.ndarray
    dt_ms: float = DEFAULT_DT_MS

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise MalformedInputError(f"raster must be a non-empty T x C matrix, got {b.shape}")
        if not np.all((b == 0) | (b == 1)):
            raise MalformedInputError("raster entries must be 0 or 1")
        b = b.astype(np.uint8, copy=True)
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def steps(self) -> int:
        return self.bits.shape[0]

    @property
    def channels(self) -> int:
        return self.bits.shape[1]

    def to_events(self) -> EventStream:
        """Events at the start of each active bin; re-binning at ``dt_ms`` is lossless."""
        t, c = np.nonzero(self.bits)
        return EventStream(self.channels, np.round(t * self.dt_ms * US_PER_MS).astype(np.int64), c)


def bin_indices(time_us: np.ndarray, dt_ms: float) -> np.ndarray:
    return np.floor(np.asarray(time_us, dtype=np.float64) / (US_PER_MS * dt_ms)).astype(np.int64)


def bin_events(stream: EventStream, dt_ms: float = DEFAULT_DT_MS, steps: int = 1) -> SpikeRaster:
    """Bin ``stream`` into a binary raster of ``steps`` rows.

    Events beyond the last bin are dropped and repeated events within a bin
    collapse to a single spike.
    """
    if dt_ms <= 0:
        raise DomainError(f"dt_ms must be positive, got {dt_ms}")
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    bits = np.zeros((steps, stream.channel_count), dtype=np.uint8)
    idx = bin_indices(stream.time_us, dt_ms)
    keep = idx < steps
    bits[idx[keep], stream.channel[keep]] = 1
    return SpikeRaster(bits, dt_ms)


# -- canonical binary format -------------------------------------------------


def encode_events(stream: EventStream) -> bytes:
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["time_us"] = stream.time_us
    rec["channel"] = stream.channel
    return HEADER.pack(MAGIC, stream.channel_count, len(stream)) + rec.tobytes()


def decode_events(data: bytes) -> EventStream:
    if len(data) < HEADER.size:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise EventFormatError("bad magic", 0)
        raise EventFormatError("truncated header", len(data))
    magic, channel_count, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", 0)
    if channel_count == 0:
        raise EventFormatError("channel_count is zero", 4)
    body = len(data) - HEADER.size
    complete = body // RECORD_DTYPE.itemsize
    if complete < count:
        raise EventFormatError(
            f"truncated record {complete} of {count}",
            HEADER.size + complete * RECORD_DTYPE.itemsize,
        )
    end = HEADER.size + count * RECORD_DTYPE.itemsize
    if len(data) > end:
        raise EventFormatError("trailing bytes after last record", end)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    t = rec["time_us"]
    if count and t.max() > np.iinfo(np.int64).max:
        i = int(np.argmax(t > np.iinfo(np.int64).max))
        raise EventFormatError("timestamp overflows int64", HEADER.size + i * RECORD_DTYPE.itemsize)
    t = t.astype(np.int64)
    c = rec["channel"].astype(np.int64)
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise EventFormatError(f"event {i} is out of time order", HEADER.size + i * RECORD_DTYPE.itemsize)
    bad = np.flatnonzero(c >= channel_count)
    if bad.size:
        i = int(bad[0])
        raise EventFormatError(
            f"event {i} channel {int(c[i])} >= channel_count {channel_count}",
            HEADER.size + i * RECORD_DTYPE.itemsize + 8,
        )
    return EventStream(int(channel_count), t, c)


def load_events_file(path: str | Path) -> EventStream:
    return decode_events(Path(path).read_bytes())


def save_events_file(path: str | Path, stream: EventStream) -> None:
    Path(path).write_bytes(encode_events(stream))


# -- datasets ------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    """Sample list for one split; paths are absolute after loading."""

    records: tuple[tuple[str, int], ...]
    class_count: int
    channel_count: int
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise MalformedInputError(f"split must be 'train' or 'test', got {self.split!r}")
        for i, (_, label) in enumerate(self.records):
            if not 0 <= label < self.class_count:
                raise MalformedInputError(f"record {i}: label {label} outside [0, {self.class_count})")


def read_manifest(path: str | Path, split: str = "train", class_count: int | None = None) -> DatasetManifest:
    """Parse a JSON-lines manifest and peek at each file header for channel_count."""
    path = Path(path)
    root = path.parent
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            p, label = obj["path"], obj["label"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedInputError(f"{path}:{lineno}: bad manifest line ({exc})") from None
        if not isinstance(label, int) or isinstance(label, bool):
            raise MalformedInputError(f"{path}:{lineno}: label must be an integer")
        records.append((str((root / p).resolve()), label))
    if not records:
        raise MalformedInputError(f"{path}: empty manifest")
    channels = set()
    for p, _ in records:
        with open(p, "rb") as fh:
            head = fh.read(HEADER.size)
        if len(head) < HEADER.size or head[:4] != MAGIC:
            raise EventFormatError(f"{p}: bad header", 0)
        channels.add(HEADER.unpack(head)[1])
    if len(channels) != 1:
        raise MalformedInputError(f"{path}: files disagree on channel_count {sorted(channels)}")
    k = class_count if class_count is not None else max(lbl for _, lbl in records) + 1
    return DatasetManifest(tuple(records), k, channels.pop(), split)


def write_manifest(path: str | Path, records: Sequence[tuple[str, int]]) -> None:
    path = Path(path)
    lines = []
    for p, label in records:
        try:
            p = str(Path(p).relative_to(path.parent))
        except ValueError:
            pass
        lines.append(json.dumps({"path": p, "label": int(label)}))
    path.write_text("\n".join(lines) + "\n")


@dataclass
class Dataset:
    """In-memory event streams with labels for one split."""

    streams: list[EventStream]
    labels: np.ndarray
    class_count: int
    channel_count: int
    split: str = "train"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.streams) != self.labels.size:
            raise MalformedInputError("streams and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise MalformedInputError("label outside [0, class_count)")
        for s in self.streams:
            if s.channel_count != self.channel_count:
                raise MalformedInputError(
                    f"stream has {s.channel_count} channels, dataset has {self.channel_count}"
                )

    def __len__(self) -> int:
        return len(self.streams)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "Dataset":
        streams = [load_events_file(p) for p, _ in manifest.records]
        labels = [lbl for _, lbl in manifest.records]
        return cls(streams, labels, manifest.class_count, manifest.channel_count, manifest.split)

    def rasters(self, dt_ms: float, steps: int) -> np.ndarray:
        """All samples binned into a (N, T, C) uint8 array (cached per dt/steps)."""
        key = (float(dt_ms), int(steps))
        if key not in self._cache:
            out = np.zeros((len(self), steps, self.channel_count), dtype=np.uint8)
            for i, s in enumerate(self.streams):
                out[i] = bin_events(s, dt_ms, steps).bits
            out.flags.writeable = False
            self._cache[key] = out
        return self._cache[key]

    def export(self, directory: str | Path, prefix: str | None = None) -> Path:
        """Write every stream as a canonical event file plus ``<split>.jsonl``."""
        directory = Path(directory)
        prefix = prefix or self.split
        (directory / prefix).mkdir(parents=True, exist_ok=True)
        records = []
        for i, (s, label) in enumerate(zip(self.streams, self.labels)):
            p = directory / prefix / f"{i:06d}.evs"
            save_events_file(p, s)
            records.append((str(p), int(label)))
        manifest = directory / f"{self.split}.jsonl"
        write_manifest(manifest, records)
        return manifest
