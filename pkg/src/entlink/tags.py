"""Time-tag streams and the QTAG binary file format.

QTAG layout (all little-endian)::

    offset  size  field
    0       4     magic b"QTAG"
    4       4     version (uint32, = 1)
    8       8     resolution_ps (uint64)
    16      8     tag_count (uint64)
    24      16*N  records: timestamp_ps uint64, channel uint32, reserved uint32 (= 0)

Records are sorted by timestamp. Timestamps at or above 2**63 ps are refused
so that all downstream arithmetic can stay in signed 64-bit integers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"QTAG"
VERSION = 1
HEADER = np.dtype([("magic", "S4"), ("version", "<u4"),
                   ("resolution_ps", "<u8"), ("tag_count", "<u8")])
RECORD = np.dtype([("timestamp_ps", "<u8"), ("channel", "<u4"), ("reserved", "<u4")])
HEADER_SIZE = HEADER.itemsize
MAX_TIMESTAMP = 2**63 - 1


class TagStreamError(ValueError):
    pass


class QtagFormatError(TagStreamError):
    """Raised for malformed QTAG files; ``offset`` is the offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class TagStream:
    timestamps: np.ndarray              # int64 ps, nondecreasing
    channels: np.ndarray                # uint32
    resolution: int = 1                 # ps
    duration: int = 0                   # ps
    channel_names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        ch = np.asarray(self.channels)
        if ch.ndim == 0:
            ch = np.full(self.timestamps.shape, int(ch))
        self.channels = np.ascontiguousarray(ch, dtype=np.uint32)
        if self.channels.shape != self.timestamps.shape:
            raise TagStreamError("timestamps and channels differ in length")
        if self.timestamps.size and self.duration < self.timestamps[-1]:
            self.duration = int(self.timestamps[-1])

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def validate(self, channel_set=None) -> "TagStream":
        """Check ordering, range and quantization; returns self."""
        t = self.timestamps
        if self.resolution < 1:
            raise TagStreamError("resolution must be >= 1 ps")
        if t.size == 0:
            return self
        if t[0] < 0:
            raise TagStreamError("negative timestamp")
        bad = np.flatnonzero(np.diff(t) < 0)
        if bad.size:
            raise TagStreamError(f"timestamps not sorted at index {bad[0] + 1}")
        if t[-1] > self.duration:
            raise TagStreamError("timestamp beyond stream duration")
        if self.resolution > 1 and np.any(t % self.resolution):
            raise TagStreamError("timestamps are not multiples of the resolution")
        if channel_set is not None:
            extra = set(np.unique(self.channels).tolist()) - set(channel_set)
            if extra:
                raise TagStreamError(f"undeclared channels {sorted(extra)}")
        return self

    def select(self, channel: int) -> "TagStream":
        m = self.channels == channel
        return TagStream(self.timestamps[m], self.channels[m], self.resolution,
                         self.duration, dict(self.channel_names))

    def shifted(self, delta: int) -> "TagStream":
        return TagStream(self.timestamps + int(delta), self.channels, self.resolution,
                         self.duration + max(int(delta), 0), dict(self.channel_names))

    @classmethod
    def empty(cls, resolution: int = 1) -> "TagStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.uint32), resolution, 0)


def sort_tags(timestamps: np.ndarray, channels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order by timestamp, ties toward the lower channel id."""
    if channels.size and np.any(channels != channels[0]):
        order = np.lexsort((channels, timestamps))
    else:
        order = np.argsort(timestamps, kind="stable")
    return timestamps[order], channels[order]


def write_qtag(path, stream: TagStream) -> None:
    stream.validate()
    header = np.zeros(1, HEADER)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["resolution_ps"] = stream.resolution
    header["tag_count"] = len(stream)
    records = np.zeros(len(stream), RECORD)
    records["timestamp_ps"] = stream.timestamps
    records["channel"] = stream.channels
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(records.tobytes())


def read_qtag(path) -> TagStream:
    size = os.path.getsize(path)
    if size < HEADER_SIZE:
        raise QtagFormatError("file shorter than header", size)
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(HEADER_SIZE), HEADER)[0]
        if header["magic"] != MAGIC:
            raise QtagFormatError("bad magic", 0)
        if header["version"] != VERSION:
            raise QtagFormatError(f"unsupported version {header['version']}", 4)
        resolution = int(header["resolution_ps"])
        if resolution < 1:
            raise QtagFormatError("resolution must be >= 1 ps", 8)
        count = int(header["tag_count"])
        expected = HEADER_SIZE + count * RECORD.itemsize
        if size != expected:
            raise QtagFormatError(
                f"tag_count {count} does not match file size {size}",
                min(size, expected))
        records = np.fromfile(fh, RECORD, count)

    ts = records["timestamp_ps"]
    if count:
        over = np.flatnonzero(ts > MAX_TIMESTAMP)
        if over.size:
            raise QtagFormatError("timestamp exceeds 2**63 ps",
                                  HEADER_SIZE + int(over[0]) * RECORD.itemsize)
        ts = ts.astype(np.int64)
        bad = np.flatnonzero(np.diff(ts) < 0)
        if bad.size:
            raise QtagFormatError("records not sorted by timestamp",
                                  HEADER_SIZE + int(bad[0] + 1) * RECORD.itemsize)
        nz = np.flatnonzero(records["reserved"])
        if nz.size:
            raise QtagFormatError("reserved field not zero",
                                  HEADER_SIZE + int(nz[0]) * RECORD.itemsize + 12)
        if resolution > 1 and np.any(ts % resolution):
            i = int(np.flatnonzero(ts % resolution)[0])
            raise QtagFormatError("timestamp not a multiple of resolution",
                                  HEADER_SIZE + i * RECORD.itemsize)
    else:
        ts = ts.astype(np.int64)
    return TagStream(ts, records["channel"].astype(np.uint32), resolution)
