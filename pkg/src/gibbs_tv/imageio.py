"""PGM images and raw observation files.

Images are written as binary P5 with maxval 255; the reader also accepts
ASCII P2 and any maxval up to 65535.  Observations ``y`` are real-valued and
are never quantised: they are stored as one JSON header line followed by
little-endian float64 values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

Y_FORMAT = "gibbs-tv-observation"


class PgmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class PgmImage:
    width: int
    height: int
    pixels: np.ndarray  # (height * width,) values in [0, 1], row-major

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64).ravel()
        if px.size != self.width * self.height:
            raise ValueError("pixel count does not match dimensions")
        if np.any(~((px >= 0) & (px <= 1))):
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    def to_bytes(self) -> np.ndarray:
        return np.rint(np.clip(self.pixels, 0.0, 1.0) * 255).astype(np.uint8)

    @classmethod
    def from_bytes(cls, width: int, height: int, data) -> "PgmImage":
        return cls(width, height, np.asarray(data, dtype=np.float64) / 255.0)


def encode_pgm(img: PgmImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + img.to_bytes().tobytes()


def write_pgm(img: PgmImage, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(img))


class _Tokens:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def next(self) -> tuple[bytes, int]:
        d, n = self.data, len(self.data)
        while self.pos < n:
            c = d[self.pos : self.pos + 1]
            if c == b"#":
                while self.pos < n and d[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif c.isspace():
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < n and not d[self.pos : self.pos + 1].isspace() and d[self.pos : self.pos + 1] != b"#":
            self.pos += 1
        if start == self.pos:
            raise PgmError("unexpected end of data", start)
        return d[start : self.pos], start

    def integer(self, what: str) -> tuple[int, int]:
        tok, at = self.next()
        if not tok.isdigit():
            raise PgmError(f"expected {what}, found {tok[:16]!r}", at)
        return int(tok), at


def decode_pgm(data: bytes) -> PgmImage:
    tokens = _Tokens(data)
    magic, at = tokens.next()
    if magic not in (b"P2", b"P5"):
        raise PgmError(f"unsupported magic {magic[:8]!r}", at)
    width, width_at = tokens.integer("width")
    height, height_at = tokens.integer("height")
    maxval, maxval_at = tokens.integer("maxval")
    if width < 1 or height < 1:
        raise PgmError("image dimensions must be positive", width_at if width < 1 else height_at)
    if not 0 < maxval < 65536:
        raise PgmError(f"maxval {maxval} out of range", maxval_at)
    count = width * height
    if magic == b"P5":
        start = tokens.pos + 1  # single whitespace byte after maxval
        if tokens.pos >= len(data) or not data[tokens.pos : tokens.pos + 1].isspace():
            raise PgmError("missing whitespace after maxval", tokens.pos)
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - start < need:
            raise PgmError(f"truncated raster: need {need} bytes, have {len(data) - start}", len(data))
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.int64)
    else:
        raw = np.empty(count, dtype=np.int64)
        for k in range(count):
            raw[k], at = tokens.integer("pixel value")
            if raw[k] > maxval:
                raise PgmError("pixel value exceeds maxval", at)
    if raw.max(initial=0) > maxval:
        bad = int(np.argmax(raw > maxval))
        raise PgmError("pixel value exceeds maxval", start + bad * dtype.itemsize)
    return PgmImage(width, height, raw / maxval)


def read_pgm(path: str | Path) -> PgmImage:
    return decode_pgm(Path(path).read_bytes())


def write_observation(y: np.ndarray, path: str | Path, width: int | None = None, height: int | None = None, **meta) -> None:
    y = np.asarray(y, dtype="<f8").ravel()
    header = {"format": Y_FORMAT, "dtype": "<f8", "count": int(y.size), "width": width, "height": height}
    header.update(meta)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(y.tobytes())


def read_observation(path: str | Path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    header = json.loads(data[:nl])
    if header.get("format") != Y_FORMAT:
        raise ValueError(f"{path}: not an observation file")
    y = np.frombuffer(data, dtype="<f8", count=header["count"], offset=nl + 1)
    return header, y.astype(np.float64)
