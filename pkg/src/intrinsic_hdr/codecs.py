"""Image file codecs: PFM (exact floats), Radiance RGBE, and 8-bit PNG.

Readers return HxWxC arrays; PFM and RGBE give float data, PNG gives codes.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .image import ImageLike, LdrImage, as_array


class CodecError(ValueError):
    """Malformed or unsupported file content."""


# --- PFM ----------------------------------------------------------------------


def encode_pfm(img: ImageLike) -> bytes:
    a = as_array(img)
    if a.shape[2] not in (1, 3):
        raise CodecError(f"PFM holds 1 or 3 channels, got {a.shape[2]}")
    kind = b"PF" if a.shape[2] == 3 else b"Pf"
    h, w = a.shape[:2]
    header = kind + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii")
    # rows are stored bottom-up
    payload = np.ascontiguousarray(a[::-1], dtype="<f4").tobytes()
    return header + payload


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token starting at ``pos``; returns (token, end)."""
    while pos < len(buf) and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise CodecError(f"PFM header truncated at byte {start}")
    return buf[start:pos], pos


def decode_pfm(buf: bytes) -> np.ndarray:
    kind, pos = _header_token(buf, 0)
    if kind not in (b"PF", b"Pf"):
        raise CodecError(f"PFM: bad signature {kind[:8]!r} at byte 0")
    channels = 3 if kind == b"PF" else 1
    dims = []
    for label in ("width", "height"):
        start = pos
        tok, pos = _header_token(buf, pos)
        if not tok.isdigit() or int(tok) == 0:
            raise CodecError(f"PFM: bad {label} {tok[:16]!r} at byte {start + 1}")
        dims.append(int(tok))
    start = pos
    tok, pos = _header_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise CodecError(f"PFM: bad scale {tok[:16]!r} at byte {start + 1}") from None
    if scale == 0 or not np.isfinite(scale):
        raise CodecError(f"PFM: scale must be finite and nonzero at byte {start + 1}")
    # exactly one whitespace byte separates the header from the payload
    pos += 1
    w, h = dims
    nbytes = 4 * w * h * channels
    if len(buf) - pos < nbytes:
        raise CodecError(f"PFM: payload truncated at byte {len(buf)}, expected {nbytes} bytes from byte {pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=w * h * channels, offset=pos)
    return data.reshape(h, w, channels)[::-1].astype(np.float32)


def write_pfm(path, img: ImageLike) -> None:
    Path(path).write_bytes(encode_pfm(img))


def read_pfm(path) -> np.ndarray:
    try:
        return decode_pfm(Path(path).read_bytes())
    except CodecError as exc:
        raise CodecError(f"{path}: {exc}") from None


# --- Radiance RGBE ------------------------------------------------------------

RGBE_SIGNATURES = (b"#?RADIANCE", b"#?RGBE")
RGBE_FORMAT = b"32-bit_rle_rgbe"
_RESOLUTION = re.compile(rb"^-Y (\d+) \+X (\d+)$")


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """Shared-exponent encoding of (..., 3) floats with round-to-nearest mantissas.

    A largest channel that would round up to 256 is clamped to 255 rather
    than moving to the next exponent; that keeps every channel within
    max/256 of its input, where a coarser exponent would not.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    top = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    live = top > 1e-38
    _, e = np.frexp(np.where(live, top, 1.0))
    scale = np.ldexp(256.0, -e)[..., None]
    mant = np.floor(rgb * scale + 0.5)
    if np.any(live & (e + 128 > 255)):
        raise CodecError("value too large for RGBE")
    e = np.where(live & (e + 128 < 1), -127, e)
    out[..., :3] = np.where(live[..., None], np.clip(mant, 0, 255), 0).astype(np.uint8)
    out[..., 3] = np.where(live, e + 128, 0).astype(np.uint8)
    return out


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode (..., 4) RGBE bytes via (m / 256) * 2**(e - 128); exponent 0 is black."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    e = rgbe[..., 3].astype(np.int32)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return rgbe[..., :3].astype(np.float64) * f[..., None]


def encode_rgbe(img: ImageLike) -> bytes:
    """Radiance file with flat (uncompressed) scanlines."""
    a = as_array(img)
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    if a.shape[2] != 3:
        raise CodecError(f"RGBE holds 3 channels, got {a.shape[2]}")
    h, w = a.shape[:2]
    header = b"#?RADIANCE\nFORMAT=" + RGBE_FORMAT + b"\n\n" + f"-Y {h} +X {w}\n".encode("ascii")
    return header + float_to_rgbe(a).tobytes()


def _read_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CodecError(f"RGBE: unterminated header line at byte {pos}")
    return buf[pos:end], end + 1


def _decode_scanline(buf: bytes, pos: int, w: int) -> tuple[np.ndarray, int]:
    """One scanline as (w, 4) bytes; handles new-style RLE and flat pixels."""
    head = buf[pos : pos + 4]
    if len(head) < 4:
        raise CodecError(f"RGBE: pixel data truncated at byte {pos}")
    rle = 8 <= w < 0x8000 and head[0] == 2 and head[1] == 2 and not head[2] & 0x80
    if not rle:
        n = 4 * w
        if len(buf) - pos < n:
            raise CodecError(f"RGBE: pixel data truncated at byte {len(buf)}")
        return np.frombuffer(buf, np.uint8, n, pos).reshape(w, 4), pos + n
    if (head[2] << 8 | head[3]) != w:
        raise CodecError(f"RGBE: scanline width mismatch at byte {pos}")
    pos += 4
    line = np.empty((4, w), dtype=np.uint8)
    for c in range(4):
        x = 0
        while x < w:
            if pos >= len(buf):
                raise CodecError(f"RGBE: run data truncated at byte {pos}")
            count = buf[pos]
            pos += 1
            if count > 128:
                count -= 128
                if x + count > w or pos >= len(buf):
                    raise CodecError(f"RGBE: bad run at byte {pos - 1}")
                line[c, x : x + count] = buf[pos]
                pos += 1
            else:
                if count == 0 or x + count > w or pos + count > len(buf):
                    raise CodecError(f"RGBE: bad literal block at byte {pos - 1}")
                line[c, x : x + count] = np.frombuffer(buf, np.uint8, count, pos)
                pos += count
            x += count
    return line.T, pos


def decode_rgbe(buf: bytes) -> np.ndarray:
    line, pos = _read_line(buf, 0)
    if not line.startswith(RGBE_SIGNATURES):
        raise CodecError("RGBE: missing #?RADIANCE signature at byte 0")
    fmt = None
    while True:
        start = pos
        line, pos = _read_line(buf, pos)
        if not line.strip():
            break
        if line.startswith(b"FORMAT="):
            fmt = line[7:].strip()
            if fmt != RGBE_FORMAT:
                raise CodecError(f"RGBE: unsupported format {fmt.decode(errors='replace')!r} at byte {start}")
    if fmt is None:
        raise CodecError(f"RGBE: no FORMAT line before byte {pos}")
    start = pos
    line, pos = _read_line(buf, pos)
    m = _RESOLUTION.match(line.strip())
    if not m:
        raise CodecError(f"RGBE: unsupported resolution line {line[:32]!r} at byte {start}")
    h, w = int(m.group(1)), int(m.group(2))
    rows = np.empty((h, w, 4), dtype=np.uint8)
    for y in range(h):
        rows[y], pos = _decode_scanline(buf, pos, w)
    return rgbe_to_float(rows)


def write_rgbe(path, img: ImageLike) -> None:
    Path(path).write_bytes(encode_rgbe(img))


def read_rgbe(path) -> np.ndarray:
    try:
        return decode_rgbe(Path(path).read_bytes())
    except CodecError as exc:
        raise CodecError(f"{path}: {exc}") from None


# --- PNG ----------------------------------------------------------------------


def write_png(path, ldr: LdrImage) -> None:
    if ldr.bit_depth != 8:
        raise CodecError(f"PNG output is 8-bit only, got {ldr.bit_depth}-bit codes")
    codes = ldr.data.astype(np.uint8)
    mode_data = codes[:, :, 0] if codes.shape[2] == 1 else codes
    Image.fromarray(mode_data).save(path, format="PNG")


def read_png(path) -> LdrImage:
    """8-bit gray or RGB PNG; gray is promoted to three identical channels."""
    try:
        with Image.open(path) as im:
            im.load()
            mode, fmt = im.mode, im.format
            data = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise CodecError(f"{path}: unreadable PNG ({exc})") from None
    if fmt != "PNG":
        raise CodecError(f"{path}: not a PNG file")
    if mode == "L":
        data = np.repeat(data[:, :, None], 3, axis=2)
    elif mode != "RGB":
        raise CodecError(f"{path}: unsupported PNG mode {mode!r}; need 8-bit gray or RGB")
    return LdrImage(data, 8)


# --- manifests ----------------------------------------------------------------


def write_manifest(path, records: list[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path) -> list[dict]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CodecError(f"{path}: line {n}: {exc.msg}") from None
    return out
