"""Binary Netpbm image I/O (PGM P5 and PPM P6), 8- and 16-bit.

Multi-byte samples are big-endian per the Netpbm spec. Float conversion is
fixed once and for all: writing rounds value*maxval half away from zero and
clips to [0, maxval]; reading divides by maxval. Integer rasters therefore
survive a read/write round trip bit-exactly.
"""

import numpy as np

from .errors import FileFormatError, ParameterError
from .grid import Grid

# Raw 16-bit depth values are meters/DEPTH_SCALE; 65535 spans 0..4 meters.
DEPTH_SCALE = 2.0**-14
DEPTH_COMMENT = "depth-scale"


def _tokens(blob, path):
    # Header tokens separated by whitespace; '#' starts a comment to EOL.
    i = 0
    n = len(blob)
    while True:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            comment_start = i
            while i < n and blob[i] not in (0x0A, 0x0D):
                i += 1
            yield ("comment", blob[comment_start + 1 : i].decode("ascii", "replace").strip(), i)
            continue
        if i >= n:
            raise FileFormatError(f"{path}: truncated header")
        start = i
        while i < n and not blob[i : i + 1].isspace() and blob[i : i + 1] != b"#":
            i += 1
        yield ("token", blob[start:i].decode("ascii", "replace"), i)


def _read_raw(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise FileFormatError(f"{path}: {e}") from e
    stream = _tokens(blob, path)
    comments = []

    def next_token():
        for kind, value, end in stream:
            if kind == "comment":
                comments.append(value)
                continue
            return value, end
        raise FileFormatError(f"{path}: truncated header")

    magic, _ = next_token()
    if magic not in ("P5", "P6"):
        raise FileFormatError(f"{path}: unsupported magic {magic!r} (want P5 or P6)")
    channels = 1 if magic == "P5" else 3
    try:
        width = int(next_token()[0])
        height = int(next_token()[0])
        maxval_text, end = next_token()
        maxval = int(maxval_text)
    except ValueError as e:
        raise FileFormatError(f"{path}: malformed header field: {e}") from e
    if width < 1 or height < 1:
        raise FileFormatError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise FileFormatError(f"{path}: maxval {maxval} outside (0, 65536)")
    raster = blob[end + 1 :]  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    expected = count * dtype.itemsize
    if len(raster) < expected:
        raise FileFormatError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    values = np.frombuffer(raster[:expected], dtype=dtype).astype(np.float64)
    data = values.reshape(height, width, channels).transpose(2, 0, 1)
    return data, maxval, comments


def read_image(path):
    """Read a PGM/PPM file into a grid of values in [0, 1]."""
    data, maxval, _ = _read_raw(path)
    return Grid._wrap(data / maxval)


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _encode(grid_data, maxval):
    raw = np.clip(_round_half_away(grid_data * maxval), 0, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    return raw.transpose(1, 2, 0).astype(dtype).tobytes()


def write_image(path, grid, maxval=255, comments=()):
    """Write a 1-channel PGM or 3-channel PPM; values are clipped to [0, 1]."""
    if grid.channels not in (1, 3):
        raise ParameterError(f"netpbm supports 1 or 3 channels, got {grid.channels}")
    if not 0 < maxval < 65536:
        raise ParameterError(f"maxval must be in (0, 65536), got {maxval}")
    magic = b"P5" if grid.channels == 1 else b"P6"
    header = [magic]
    for comment in comments:
        header.append(b"# " + comment.encode("ascii"))
    header.append(f"{grid.width} {grid.height}".encode("ascii"))
    header.append(str(maxval).encode("ascii"))
    body = _encode(np.clip(grid.data, 0.0, 1.0), maxval)
    with open(path, "wb") as f:
        f.write(b"\n".join(header) + b"\n" + body)


def read_depth(path):
    """Read a 16-bit PGM depth map; raw values scale by its depth-scale comment."""
    data, maxval, comments = _read_raw(path)
    if data.shape[0] != 1:
        raise FileFormatError(f"{path}: depth maps must be single-channel PGM")
    scale = DEPTH_SCALE
    for comment in comments:
        if comment.startswith(DEPTH_COMMENT):
            try:
                scale = float(comment.split("=", 1)[1])
            except (IndexError, ValueError) as e:
                raise FileFormatError(f"{path}: malformed {DEPTH_COMMENT} comment") from e
    return Grid._wrap(data * scale)


def write_depth(path, depth, scale=DEPTH_SCALE):
    """Write a depth grid as 16-bit PGM with an explicit depth-scale comment."""
    if depth.channels != 1:
        raise ParameterError(f"depth maps must have 1 channel, got {depth.channels}")
    raw = np.clip(_round_half_away(depth.data / scale), 0, 65535)
    header = (
        f"P5\n# {DEPTH_COMMENT}={scale!r}\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    )
    with open(path, "wb") as f:
        f.write(header + raw.transpose(1, 2, 0).astype(">u2").tobytes())
