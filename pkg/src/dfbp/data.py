"""Synthetic face corpus, image/label ingestion and single-tensor files.

Pixels are float32 in [-1, 1] throughout; 8-bit inputs map 0 -> -1 and
maxval -> 1.

Synthetic score
---------------
Each face is drawn from :class:`SyntheticFaceParams`. Its noiseless score is

    symmetry   = 1 - |asymmetry| / ASYM_MAX          in [0, 1]
    smoothness = 1 - texture_noise / NOISE_MAX       in [0, 1]
    smile      = (mouth_curvature + 1) / 2           in [0, 1]
    raw        = 0.5 * symmetry + 0.5 * smoothness + 0.25 * smile
    score      = 1 + 4 * min(raw, 1)

so a perfectly symmetric, noise-free face scores 5.0 whatever its mouth,
and the score is 4-Lipschitz in (symmetry, smoothness, smile) under the L1
norm. Eye spacing and face aspect change the picture but not the score.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import container
from .rng import DiffusionRng

ASYM_MAX = 0.15
NOISE_MAX = 0.35
PARAM_BOUNDS = {
    "eye_spacing": (0.25, 0.45),
    "aspect": (0.75, 1.0),
    "mouth_curvature": (-1.0, 1.0),
    "asymmetry": (-ASYM_MAX, ASYM_MAX),
    "texture_noise": (0.0, NOISE_MAX),
}
SCORE_WEIGHTS = {"symmetry": 0.5, "smoothness": 0.5, "smile": 0.25}
IMAGE_EXTENSIONS = (".pgm", ".dfbp")
SIDECAR_FILES = ("manifest.json", "labels.csv")


class DataError(ValueError):
    pass


class LabelFormatError(DataError):
    pass


class ScoreRangeError(DataError):
    pass


class ImageFormatError(DataError):
    pass


@dataclass
class SyntheticFaceParams:
    eye_spacing: float = 0.35
    aspect: float = 0.875
    mouth_curvature: float = 0.0
    asymmetry: float = 0.0
    texture_noise: float = 0.0

    def __post_init__(self):
        for name, (lo, hi) in PARAM_BOUNDS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise DataError(f"{name}={v} outside [{lo}, {hi}]")

    def score(self) -> float:
        return synthetic_score(self)


@dataclass
class UnlabeledSample:
    image: np.ndarray
    id: str = ""
    params: SyntheticFaceParams | None = None


@dataclass
class LabeledSample:
    image: np.ndarray
    score: float
    id: str = ""
    params: SyntheticFaceParams | None = None

    def __post_init__(self):
        if not 1.0 <= self.score <= 5.0:
            raise ScoreRangeError(f"score {self.score} outside [1, 5] for {self.id!r}")


def synthetic_score(p: SyntheticFaceParams) -> float:
    symmetry = 1.0 - abs(p.asymmetry) / ASYM_MAX
    smoothness = 1.0 - p.texture_noise / NOISE_MAX
    smile = (p.mouth_curvature + 1.0) / 2.0
    raw = (SCORE_WEIGHTS["symmetry"] * symmetry + SCORE_WEIGHTS["smoothness"] * smoothness
           + SCORE_WEIGHTS["smile"] * smile)
    return 1.0 + 4.0 * min(raw, 1.0)


def _soft(d: np.ndarray, width: float) -> np.ndarray:
    # 1 inside (d < 0), 0 outside, smooth over ~width
    return 1.0 / (1.0 + np.exp(d / width))


def render_face(p: SyntheticFaceParams, size: int, noise: np.ndarray | None = None) -> np.ndarray:
    """Rasterise a face to a (size, size, 1) float32 image in [-1, 1].

    ``noise`` is a (size, size) standard-normal field scaled by
    ``texture_noise`` inside the face; omit it for a noise-free render.
    """
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")  # v: down, u: right
    edge = 1.0 / size
    img = np.full((size, size), -1.0)

    ax, ay = 0.8 * p.aspect, 0.85
    face = _soft(np.sqrt((u / ax) ** 2 + (v / ay) ** 2) - 1.0, edge / ax)
    img = img + face * 1.6  # skin at 0.6

    a = p.asymmetry
    eyes = [(-p.eye_spacing, -0.25), (p.eye_spacing + a, -0.25 + a)]
    for ex, ey in eyes:
        eye = _soft(np.hypot(u - ex, v - ey) - 0.13, edge)
        img = img - eye * 1.3

    xm, w = 0.5 * a, 0.35
    s = (u - xm) / w
    curve = 0.45 + 0.15 * p.mouth_curvature * (1.0 - s**2)
    band = _soft(np.abs(v - curve) - 0.06, edge) * _soft(np.abs(s) - 1.0, edge / w)
    img = img - band * 1.2

    if noise is not None and p.texture_noise > 0:
        img = img + face * p.texture_noise * noise
    return np.clip(img, -1.0, 1.0).astype(np.float32)[:, :, None]


def sample_params(rng: DiffusionRng) -> SyntheticFaceParams:
    vals = {}
    for name, (lo, hi) in PARAM_BOUNDS.items():
        vals[name] = float(lo + (hi - lo) * rng.uniform())
    return SyntheticFaceParams(**vals)


def generate_synthetic_corpus(
    n: int,
    image_size: int = 16,
    seed: int = 0,
    labeled: bool = True,
    rating_noise: float = 0.0,
) -> list:
    """Render ``n`` random faces; attach scores when ``labeled``.

    ``rating_noise`` adds N(0, rating_noise^2) to each score (clipped to
    [1, 5]) to mimic averaged human ratings.
    """
    if int(n) != n or n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    if int(image_size) != image_size or image_size < 4:
        raise DataError(f"image_size must be an integer >= 4, got {image_size}")
    samples = []
    for i in range(int(n)):
        rng = DiffusionRng.from_labels(seed, i)
        p = sample_params(rng)
        img = render_face(p, int(image_size), rng.normal((image_size, image_size), np.float64))
        sid = f"img_{i:05d}"
        if labeled:
            y = synthetic_score(p)
            if rating_noise > 0:
                y = float(np.clip(y + rating_noise * rng.normal(1, np.float64)[0], 1.0, 5.0))
            samples.append(LabeledSample(img, y, sid, p))
        else:
            samples.append(UnlabeledSample(img, sid, p))
    return samples


def corpus_manifest(samples: list, seed: int, image_size: int) -> dict:
    return {
        "seed": seed,
        "n": len(samples),
        "image_size": image_size,
        "labeled": isinstance(samples[0], LabeledSample),
        "score_function": {"weights": SCORE_WEIGHTS, "asym_max": ASYM_MAX,
                           "noise_max": NOISE_MAX},
        "samples": [
            {"id": s.id, "params": asdict(s.params),
             **({"score": s.score} if isinstance(s, LabeledSample) else {})}
            for s in samples
        ],
    }


def stack_images(samples) -> np.ndarray:
    return np.stack([s.image for s in samples]).astype(np.float32)


# ---------------------------------------------------------------------------
# PGM


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [-1, 1] single-channel image as 8-bit binary PGM."""
    img = np.asarray(image)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ImageFormatError(f"PGM needs one channel, got {img.shape[2]}")
        img = img[:, :, 0]
    q = np.round((np.clip(img, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # single whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM into an (H, W, 1) float32 array in [-1, 1]."""
    data = Path(path).read_bytes()
    tokens, pos = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 256:
        raise ImageFormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise ImageFormatError(f"{path}: truncated raster")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float32)
    return (px / np.float32(maxval) * 2.0 - 1.0).astype(np.float32)[:, :, None]


# ---------------------------------------------------------------------------
# single-tensor DFBP files


def write_tensor(path, array) -> None:
    arr = array.data if hasattr(array, "data") and not isinstance(array, np.ndarray) else array
    container.save(path, {}, {"tensor": np.asarray(arr, dtype=np.float32)})


def read_tensor(path) -> np.ndarray:
    _, tensors = container.load(path)
    if len(tensors) != 1:
        raise container.ContainerError(f"{path}: expected one tensor, found {len(tensors)}")
    return next(iter(tensors.values()))


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing image file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".dfbp":
        img = read_tensor(path)
        if img.ndim == 2:
            img = img[:, :, None]
        if img.ndim != 3:
            raise ImageFormatError(f"{path}: expected H x W x C tensor, got {img.shape}")
        return img
    raise ImageFormatError(f"{path}: unsupported image type {suffix!r}")


# ---------------------------------------------------------------------------
# ingestion


def read_labels_csv(path) -> list[tuple[str, float]]:
    """Parse a ``path,score`` CSV (header required) into (id, score) pairs."""
    rows: list[tuple[str, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "score"]:
            raise LabelFormatError(f"{path}:1: expected header 'path,score', got {header}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 or not row[0].strip():
                raise LabelFormatError(f"{path}:{line}: expected 2 fields, got {row}")
            try:
                score = float(row[1])
            except ValueError as exc:
                raise LabelFormatError(f"{path}:{line}: score {row[1]!r} is not a number") from exc
            if not np.isfinite(score) or not 1.0 <= score <= 5.0:
                raise ScoreRangeError(f"{path}:{line}: score {score} outside [1, 5]")
            rows.append((row[0].strip(), score))
    return rows


def load_labeled(path) -> list[LabeledSample]:
    """Labels CSV plus the images it names (paths relative to the CSV)."""
    base = Path(path).parent
    return [LabeledSample(read_image(base / rel), score, rel) for rel, score in read_labels_csv(path)]


def read_image_dir(path) -> list[UnlabeledSample]:
    """Every .pgm / .dfbp image in a directory, in name order.

    Known sidecar files are ignored; anything else is an error rather than
    being skipped.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"missing image directory: {root}")
    out = []
    for entry in sorted(root.iterdir()):
        if entry.is_dir() or entry.name in SIDECAR_FILES:
            continue
        if entry.suffix.lower() not in IMAGE_EXTENSIONS:
            raise ImageFormatError(f"{entry}: unsupported file in image directory")
        out.append(UnlabeledSample(read_image(entry), entry.name))
    return out


def write_corpus(samples: list, out_dir, seed: int, image_size: int) -> None:
    """PGM per image, ``labels.csv`` when labeled, and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_pgm(out / f"{s.id}.pgm", s.image)
    if isinstance(samples[0], LabeledSample):
        with open(out / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "score"])
            for s in samples:
                w.writerow([f"{s.id}.pgm", repr(float(s.score))])
    with open(out / "manifest.json", "w") as fh:
        json.dump(corpus_manifest(samples, seed, image_size), fh, indent=1, sort_keys=True)
        fh.write("\n")
