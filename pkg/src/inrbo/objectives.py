"""Signals, reconstruction metrics and the train-and-score objective.

Supported inputs: PNG (8-bit gray/RGB), PGM/PPM (plain and raw), WAV
(RIFF, PCM16, mono or stereo) and analytic occupancy shapes.
"""
from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import CorruptFile, DimensionMismatch, ModalityMismatch, UnsupportedFormat
from .inr import NetworkSpec, TrainReport, forward, train
from .numerics import make_rng
from .space import Configuration

PSNR_CAP = 100.0
PSNR_FLOOR = -10.0
IOU_FLOOR = 0.0
MODALITIES = ("image", "audio", "occupancy")


@dataclass(frozen=True)
class SignalDataset:
    modality: str
    coords: np.ndarray
    targets: np.ndarray
    shape: tuple[int, ...]
    coord_range: tuple[float, float]
    name: str = ""

    @property
    def input_dim(self) -> int:
        return self.coords.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class Score:
    value: float
    metric: str
    diverged: bool = False
    report: TrainReport | None = field(default=None, compare=False)


# -- images --------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _pixel_grid(h: int, w: int) -> np.ndarray:
    """Pixel centers of an ``h x w`` grid mapped to ``[-1, 1]^2``, row-major (y, x)."""
    ys = (2.0 * (np.arange(h) + 0.5) / h) - 1.0
    xs = (2.0 * (np.arange(w) + 0.5) / w) - 1.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _box_downscale(img: np.ndarray, max_side: int) -> np.ndarray:
    h, w = img.shape[:2]
    factor = max(1, math.ceil(max(h, w) / max_side))
    if factor == 1:
        return img
    h2, w2 = h // factor, w // factor
    crop = img[:h2 * factor, :w2 * factor]
    return crop.reshape(h2, factor, w2, factor, -1).mean(axis=(1, 3))


def _check_png_chunks(data: bytes) -> None:
    """Walk the chunk list so truncation and CRC errors get a byte offset."""
    pos = len(_PNG_MAGIC)
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise CorruptFile("truncated PNG chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        end = pos + 12 + length
        if end > len(data):
            raise CorruptFile(f"truncated PNG chunk {ctype!r}", pos)
        crc = struct.unpack(">I", data[end - 4:end])[0]
        if zlib.crc32(data[pos + 4:pos + 8 + length]) & 0xFFFFFFFF != crc:
            raise CorruptFile(f"CRC mismatch in PNG chunk {ctype!r}", pos)
        if ctype == b"IEND":
            seen_end = True
            break
        pos = end
    if not seen_end:
        raise CorruptFile("PNG ends without an IEND chunk", pos)


def _read_png(data: bytes) -> np.ndarray:
    from PIL import Image

    _check_png_chunks(data)
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif mode == "P":
                arr = np.asarray(im.convert("RGB"))
            elif mode in ("RGBA", "LA"):
                arr = np.asarray(im.convert(mode[:-1] if mode == "LA" else "RGB"))
            else:
                raise UnsupportedFormat(f"PNG mode {mode} is not 8-bit gray or RGB")
    except (OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, UnsupportedFormat):
            raise
        raise CorruptFile(f"undecodable PNG: {exc}") from exc
    arr = arr.astype(np.float64) / 255.0
    return arr[:, :, None] if arr.ndim == 2 else arr


def _pnm_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers, skipping ``#`` comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise CorruptFile("unexpected end of PNM data", pos)
        start = pos
        while pos < n and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptFile(f"expected a number, found {data[pos:pos + 1]!r}", pos)
        out.append(int(data[start:pos]))
    return out, pos


def _read_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    channels = 1 if magic in (b"P2", b"P5") else 3
    (w, h, maxval), pos = _pnm_tokens(data, 3, 2)
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise CorruptFile(f"invalid PNM header (width={w}, height={h}, maxval={maxval})", 2)
    count = w * h * channels
    if magic in (b"P2", b"P3"):
        values, _ = _pnm_tokens(data, count, pos)
        arr = np.array(values, dtype=np.float64)
    else:
        pos += 1  # single whitespace byte after maxval
        width = 1 if maxval < 256 else 2
        need = count * width
        if pos + need > len(data):
            raise CorruptFile(f"raster truncated: need {need} bytes, have {len(data) - pos}", len(data))
        dtype = np.uint8 if width == 1 else np.dtype(">u2")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    if np.any(arr > maxval):
        raise CorruptFile("sample exceeds maxval")
    return (arr / maxval).reshape(h, w, channels)


def read_image_array(path: str | Path) -> np.ndarray:
    """``H x W x C`` array in ``[0, 1]`` (C is 1 or 3)."""
    data = Path(path).read_bytes()
    if data.startswith(_PNG_MAGIC):
        return _read_png(data)
    if data[:2] in (b"P2", b"P3", b"P5", b"P6"):
        return _read_pnm(data)
    raise UnsupportedFormat(f"{path}: not a PNG or PGM/PPM file")


def image_dataset(img: np.ndarray, max_side: int | None = None, name: str = "") -> SignalDataset:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if max_side is not None:
        img = _box_downscale(img, max_side)
    h, w, c = img.shape
    return SignalDataset("image", _pixel_grid(h, w), img.reshape(h * w, c), (h, w),
                         (-1.0, 1.0), name)


def load_image(path: str | Path, max_side: int = 128) -> SignalDataset:
    return image_dataset(read_image_array(path), max_side, name=Path(path).name)


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Write 8-bit grayscale pixels as a raw (P5) PGM."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


# -- audio -------------------------------------------------------------------------

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def read_wav(data: bytes) -> tuple[np.ndarray, int]:
    """Decode PCM16 WAV bytes to ``(frames x channels int16 array, sample rate)``."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedFormat("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos < len(data):
        if pos + 8 > len(data):
            raise CorruptFile("truncated chunk header", pos)
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + 16 > len(data):
                raise CorruptFile("truncated fmt chunk", pos)
            tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", data[body:body + 16])
            if tag == _WAVE_FORMAT_EXTENSIBLE and size >= 40 and body + 26 <= len(data):
                tag = struct.unpack("<H", data[body + 24:body + 26])[0]
            if tag != _WAVE_FORMAT_PCM or bits != 16:
                raise UnsupportedFormat(f"only 16-bit PCM is supported (format tag {tag}, {bits} bits)")
            if channels < 1:
                raise CorruptFile("fmt chunk declares zero channels", body)
            fmt = (channels, rate)
        elif cid == b"data":
            if fmt is None:
                raise CorruptFile("data chunk before fmt chunk", pos)
            channels, rate = fmt
            frame = 2 * channels
            if body + size > len(data):
                raise CorruptFile(f"data chunk truncated: declares {size} bytes, "
                                  f"{len(data) - body} present", len(data))
            if size % frame:
                raise CorruptFile("data chunk is not a whole number of frames", body + size)
            samples = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            return samples.reshape(-1, channels), rate
        pos = body + size + (size & 1)
    raise CorruptFile("no data chunk found", len(data))


def audio_dataset(samples: np.ndarray, max_samples: int | None = None, name: str = "") -> SignalDataset:
    """``samples`` are int16 frames (``N`` or ``N x channels``)."""
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    mono = samples.astype(np.float64).mean(axis=1) / 32768.0
    if max_samples is not None:
        mono = mono[:max_samples]
    n = mono.shape[0]
    coords = np.linspace(-100.0, 100.0, n)[:, None] if n > 1 else np.zeros((n, 1))
    return SignalDataset("audio", coords, mono[:, None], (n,), (-100.0, 100.0), name)


def load_audio_wav(path: str | Path, max_samples: int = 16000) -> SignalDataset:
    samples, _ = read_wav(Path(path).read_bytes())
    return audio_dataset(samples, max_samples, name=Path(path).name)


def write_wav(path: str | Path, samples: np.ndarray, rate: int = 16000) -> None:
    """Write int16 frames (``N`` or ``N x channels``) as PCM16 WAV."""
    samples = np.asarray(samples, dtype="<i2")
    if samples.ndim == 1:
        samples = samples[:, None]
    channels = samples.shape[1]
    payload = samples.tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
                         _WAVE_FORMAT_PCM, channels, rate, rate * 2 * channels, 2 * channels, 16,
                         b"data", len(payload))
    Path(path).write_bytes(header + payload)


# -- occupancy ---------------------------------------------------------------------

def _inside(shape: Mapping[str, Any], pts: np.ndarray) -> np.ndarray:
    kind = shape.get("type")
    center = np.asarray(shape.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
    p = pts - center
    if kind == "sphere":
        return np.sum(p * p, axis=1) <= float(shape.get("radius", 0.5)) ** 2
    if kind == "torus":
        major = float(shape.get("major_radius", 0.5))
        minor = float(shape.get("minor_radius", 0.2))
        ring = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2) - major
        return ring ** 2 + p[:, 2] ** 2 <= minor ** 2
    if kind == "union":
        parts = shape.get("shapes") or []
        if not parts:
            raise ValueError("union needs a non-empty 'shapes' list")
        out = np.zeros(len(pts), dtype=bool)
        for part in parts:
            out |= _inside(part, pts)
        return out
    raise ValueError(f"unknown shape type {kind!r} (expected sphere, torus or union)")


def make_occupancy(shape: Mapping[str, Any], resolution: int) -> SignalDataset:
    if not 1 <= resolution <= 64:
        raise ValueError("resolution must be between 1 and 64")
    c = (2.0 * (np.arange(resolution) + 0.5) / resolution) - 1.0
    grid = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    occ = _inside(shape, grid).astype(np.float64)
    return SignalDataset("occupancy", grid, occ[:, None], (resolution,) * 3, (-1.0, 1.0),
                         str(shape.get("type", "")))


# -- metrics -----------------------------------------------------------------------------

def psnr(pred, target, peak: float = 1.0) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"shapes differ: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse < peak * peak * 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def iou(pred, target, threshold: float = 0.5) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"shapes differ: {pred.shape} vs {target.shape}")
    p = pred >= threshold
    t = target >= 0.5
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


# -- the objective ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainBudget:
    """Per-trial training budget and network shape."""

    epochs: int = 2000
    batch: int | None = None
    width: int = 256
    pe_bands: int = 6
    output_init_halfwidth: float | None = None
    dtype: str = "float32"
    modality: str | None = None

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch": self.batch, "width": self.width,
                "pe_bands": self.pe_bands, "output_init_halfwidth": self.output_init_halfwidth,
                "dtype": self.dtype}


def _metric_for(modality: str) -> tuple[str, float]:
    if modality == "occupancy":
        return "iou", IOU_FLOOR
    return "psnr", PSNR_FLOOR


def _output_init(dataset: SignalDataset, budget: TrainBudget) -> float | None:
    if budget.output_init_halfwidth is not None:
        return budget.output_init_halfwidth
    if dataset.modality == "audio":
        return 1e-4
    return None


def evaluate_objective(config: Configuration, dataset: SignalDataset, budget: TrainBudget,
                       seed: int) -> Score:
    """Train an INR for ``config`` on ``dataset`` and score the reconstruction.

    Divergence yields the floor score with ``diverged=True`` instead of an
    exception, so every in-space configuration gives a comparable score.
    """
    if dataset.modality not in MODALITIES:
        raise ModalityMismatch(f"unknown modality {dataset.modality!r}")
    if budget.modality is not None and budget.modality != dataset.modality:
        raise ModalityMismatch(f"objective expects {budget.modality} data, got {dataset.modality}")
    if dataset.modality == "occupancy" and dataset.output_dim != 1:
        raise ModalityMismatch("occupancy targets must have one channel")
    metric, floor = _metric_for(dataset.modality)
    spec = NetworkSpec.from_configuration(
        config, dataset.input_dim, dataset.output_dim, width=budget.width,
        pe_bands=budget.pe_bands, output_init_halfwidth=_output_init(dataset, budget),
        dtype=budget.dtype)
    rng = make_rng(seed)
    state, report = train(spec, dataset.coords, dataset.targets, budget.epochs, rng, batch=budget.batch)
    if report.diverged:
        return Score(floor, metric, True, report)
    with np.errstate(all="ignore"):
        pred = forward(spec, state, dataset.coords).astype(np.float64)
    if not np.all(np.isfinite(pred)):
        return Score(floor, metric, True, report)
    if dataset.modality == "image":
        value = psnr(np.clip(pred, 0.0, 1.0), dataset.targets, 1.0)
    elif dataset.modality == "audio":
        value = psnr(np.clip(pred, -1.0, 1.0), dataset.targets, 2.0)
    else:
        value = iou(pred, dataset.targets, 0.5)
    return Score(float(value), metric, False, report)


class INRObjective:
    """Callable ``(config, seed) -> Score`` bound to one dataset and budget."""

    def __init__(self, dataset: SignalDataset, budget: TrainBudget):
        self.dataset = dataset
        self.budget = budget

    def __call__(self, config: Configuration, seed: int) -> Score:
        return evaluate_objective(config, self.dataset, self.budget, seed)


__all__ = [
    "INRObjective", "Score", "SignalDataset", "TrainBudget", "audio_dataset", "evaluate_objective",
    "image_dataset", "iou", "load_audio_wav", "load_image", "make_occupancy", "psnr",
    "read_image_array", "read_wav", "write_pgm", "write_wav",
]
