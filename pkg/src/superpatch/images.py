"""Netpbm I/O (PGM P2/P5, PBM P1/P4) and synthetic test images."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

_WS = b" \t\n\r\v\f"


@dataclass
class GridImage:
    samples: np.ndarray  # (height, width); normalized to [0, 1] or binary {0, 1}
    maxval: int = 255

    @property
    def height(self) -> int:
        return int(self.samples.shape[0])

    @property
    def width(self) -> int:
        return int(self.samples.shape[1])


class _Header:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def token(self) -> tuple[bytes, int]:
        d = self.data
        while self.pos < len(d):
            ch = d[self.pos:self.pos + 1]
            if ch == b"#":
                while self.pos < len(d) and d[self.pos:self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif ch in _WS:
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < len(d) and d[self.pos:self.pos + 1] not in _WS + b"#":
            self.pos += 1
        if start == self.pos:
            raise FormatError("unexpected end of header", start)
        return d[start:self.pos], start

    def integer(self, what: str) -> int:
        tok, at = self.token()
        try:
            value = int(tok)
        except ValueError:
            raise FormatError(f"bad {what} {tok!r}", at) from None
        if value < 0:
            raise FormatError(f"negative {what}", at)
        return value


def _parse(data: bytes) -> tuple[str, np.ndarray, int]:
    hdr = _Header(data)
    magic, _ = hdr.token()
    magic = magic.decode("ascii", "replace")
    if magic not in ("P1", "P2", "P4", "P5"):
        raise FormatError(f"unsupported magic {magic!r}", 0)
    width = hdr.integer("width")
    height = hdr.integer("height")
    maxval = 1
    if magic in ("P2", "P5"):
        maxval = hdr.integer("maxval")
        if not 0 < maxval <= 65535:
            raise FormatError(f"maxval {maxval} out of range", hdr.pos)
    n = width * height

    if magic in ("P4", "P5"):
        start = hdr.pos + 1  # exactly one whitespace byte before the raster
        if magic == "P5":
            nbytes = n * (2 if maxval > 255 else 1)
            raw = data[start:start + nbytes]
            if len(raw) < nbytes:
                raise FormatError(f"truncated raster: {len(raw)} of {nbytes} bytes", start + len(raw))
            dtype = ">u2" if maxval > 255 else "u1"
            vals = np.frombuffer(raw, dtype=dtype).astype(np.int64)
            if (vals > maxval).any():
                raise FormatError("sample exceeds maxval", start)
        else:
            row_bytes = (width + 7) // 8
            nbytes = row_bytes * height
            raw = data[start:start + nbytes]
            if len(raw) < nbytes:
                raise FormatError(f"truncated raster: {len(raw)} of {nbytes} bytes", start + len(raw))
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8).reshape(height, row_bytes), axis=1)
            vals = bits[:, :width].astype(np.int64).ravel()
        return magic, vals.reshape(height, width), maxval

    vals = []
    if magic == "P2":
        for _ in range(n):
            try:
                v = hdr.integer("sample")
            except FormatError as exc:
                raise FormatError(f"truncated raster after {len(vals)} samples", exc.offset) from None
            if v > maxval:
                raise FormatError("sample exceeds maxval", hdr.pos)
            vals.append(v)
    else:
        # plain PBM digits need no separators
        d = data
        while len(vals) < n:
            while hdr.pos < len(d) and (d[hdr.pos:hdr.pos + 1] in _WS or d[hdr.pos:hdr.pos + 1] == b"#"):
                if d[hdr.pos:hdr.pos + 1] == b"#":
                    while hdr.pos < len(d) and d[hdr.pos:hdr.pos + 1] != b"\n":
                        hdr.pos += 1
                else:
                    hdr.pos += 1
            if hdr.pos >= len(d):
                raise FormatError(f"truncated raster after {len(vals)} samples", hdr.pos)
            ch = d[hdr.pos:hdr.pos + 1]
            if ch not in (b"0", b"1"):
                raise FormatError(f"bad PBM digit {ch!r}", hdr.pos)
            vals.append(int(ch))
            hdr.pos += 1
    return magic, np.asarray(vals, dtype=np.int64).reshape(height, width), maxval


def read_pgm(path) -> GridImage:
    """Read P2/P5 (normalized by maxval) or P1/P4 (binary) images."""
    magic, vals, maxval = _parse(Path(path).read_bytes())
    if magic in ("P1", "P4"):
        return GridImage(vals.astype(np.float64), 1)
    return GridImage(vals / float(maxval), maxval)


read_pbm = read_pgm


def _quantize(samples, maxval: int) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 2:
        raise InputError("image must be 2-D")
    return np.clip(np.rint(s * maxval), 0, maxval).astype(np.int64)


def write_pgm(image, path, maxval: int = 255, plain: bool = False) -> None:
    samples = image.samples if isinstance(image, GridImage) else image
    if not 0 < maxval <= 65535:
        raise InputError("maxval must be in 1..65535")
    q = _quantize(samples, maxval)
    h, w = q.shape
    if plain:
        body = "\n".join(" ".join(str(v) for v in row) for row in q)
        Path(path).write_bytes(f"P2\n{w} {h}\n{maxval}\n{body}\n".encode("ascii"))
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.astype(dtype).tobytes())


def write_pbm(image, path, plain: bool = False) -> None:
    samples = image.samples if isinstance(image, GridImage) else image
    bits = (np.asarray(samples) > 0).astype(np.uint8)
    if bits.ndim != 2:
        raise InputError("image must be 2-D")
    h, w = bits.shape
    if plain:
        body = "\n".join("".join(str(v) for v in row) for row in bits)
        Path(path).write_bytes(f"P1\n{w} {h}\n{body}\n".encode("ascii"))
    else:
        Path(path).write_bytes(f"P4\n{w} {h}\n".encode("ascii") + np.packbits(bits, axis=1).tobytes())


# --- synthetic inputs --------------------------------------------------------

def circle_image(size: int, radius: float) -> np.ndarray:
    """Pixel is foreground iff its centre lies within ``radius`` of the image centre."""
    if size < 8:
        raise InputError("size must be at least 8")
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[:size, :size]
    return (((yy - c) ** 2 + (xx - c) ** 2) <= radius * radius).astype(np.float64)


def blob_image(size: int, seed: int = 0, noise: float = 0.0, blobs: int = 2) -> np.ndarray:
    """Union of random ellipses, plus optional Gaussian noise on the intensities."""
    if size < 8:
        raise InputError("size must be at least 8")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(blobs):
        cy, cx = rng.uniform(0.25, 0.75, size=2) * size
        ry, rx = rng.uniform(0.12, 0.25, size=2) * size
        t = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        img[(u / rx) ** 2 + (v / ry) ** 2 <= 1.0] = 1.0
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    return img
