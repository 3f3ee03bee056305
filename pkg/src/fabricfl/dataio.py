"""Dataset ingestion and preprocessing.

Grayscale images arrive as binary PGM files under `<root>/tumor/` and
`<root>/notumor/`, get resized to 128x128 with nearest-neighbor
sampling, scaled into [0, 1], and flattened row-major.  For encrypted
training experiments, pixel intensities can instead be mapped through
deterministic Paillier encryption into pseudo-random features, which
preserves equality of intensities but destroys their ordering.

Synthetic generators provide desk-scale stand-ins for a real corpus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .encoding import FixedPointCodec
from .paillier import PaillierKeypair, PaillierPublicKey, encrypt

TARGET_SIZE = 128
LABEL_DIRS = {"tumor": 1, "notumor": 0}
_CIPHER_BITS = 24


@dataclass
class ImageSample:
    pixels: np.ndarray  # 2-D uint8
    label: int
    source_id: str


@dataclass
class FeatureVector:
    values: np.ndarray
    label: int
    encrypted_origin: bool = False


class PGMFormatError(ValueError):
    """Raised for files that are not valid 8-bit binary PGM."""


# --- PGM files -----------------------------------------------------------


def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Header tokens (skipping whitespace and # comments) and body offset."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise PGMFormatError("truncated PGM header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            start = i
            while i < len(data) and not data[i : i + 1].isspace():
                i += 1
            tokens.append(data[start:i])
    return tokens, i + 1  # single whitespace byte separates header from pixels


def load_pgm(path: str | Path, label: int | None = None) -> ImageSample:
    """Load a binary PGM (P5, maxval 255).

    The label comes from the parent directory name (`tumor/` = 1,
    `notumor/` = 0) unless passed explicitly.
    """
    path = Path(path)
    data = path.read_bytes()
    tokens, offset = _read_pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise PGMFormatError(f"{path}: expected binary PGM magic P5, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMFormatError(f"{path}: malformed header") from exc
    if width < 1 or height < 1:
        raise PGMFormatError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise PGMFormatError(f"{path}: maxval must be 255, got {maxval}")
    body = data[offset : offset + width * height]
    if len(body) != width * height:
        raise PGMFormatError(f"{path}: truncated pixel payload")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    if label is None:
        dirname = path.parent.name
        if dirname not in LABEL_DIRS:
            raise ValueError(
                f"{path}: cannot infer label from directory {dirname!r}; "
                f"expected one of {sorted(LABEL_DIRS)}"
            )
        label = LABEL_DIRS[dirname]
    return ImageSample(pixels=pixels.copy(), label=int(label), source_id=str(path))


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"pixels must be 2-D, got shape {arr.shape}")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + arr.tobytes())


# --- preprocessing ---------------------------------------------------------


def _resize_nearest(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = pixels.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return pixels[np.ix_(rows, cols)]


def resize_128(img: ImageSample) -> ImageSample:
    """Nearest-neighbor resample to 128x128; a 128x128 input is unchanged."""
    if img.pixels.shape == (TARGET_SIZE, TARGET_SIZE):
        return img
    resized = _resize_nearest(img.pixels, TARGET_SIZE, TARGET_SIZE)
    return ImageSample(pixels=resized.copy(), label=img.label, source_id=img.source_id)


def normalize_flatten(img: ImageSample) -> FeatureVector:
    """Row-major flatten with intensities scaled into [0, 1]."""
    if img.pixels.shape != (TARGET_SIZE, TARGET_SIZE):
        raise ValueError(f"expected {TARGET_SIZE}x{TARGET_SIZE} pixels, got {img.pixels.shape}")
    values = img.pixels.astype(np.float64).ravel() / 255.0
    return FeatureVector(values=values, label=img.label, encrypted_origin=False)


def _cipher_value_map(
    intensities: np.ndarray,
    key: PaillierPublicKey | PaillierKeypair,
    codec: FixedPointCodec,
    session_seed: int | bytes,
) -> np.ndarray:
    """Deterministically map each 8-bit intensity to a value in [0, 1).

    Equal intensities yield equal ciphertexts within a session, so one
    encryption per distinct intensity suffices.
    """
    cache: dict[int, float] = {}
    flat = intensities.ravel()
    mapped = np.empty(flat.shape, dtype=np.float64)
    for i, intensity in enumerate(flat):
        intensity = int(intensity)
        feature = cache.get(intensity)
        if feature is None:
            ct = encrypt(
                key,
                codec.encode(intensity / 255.0),
                mode="deterministic",
                session_seed=session_seed,
            )
            feature = (ct.value % (1 << _CIPHER_BITS)) / (1 << _CIPHER_BITS)
            cache[intensity] = feature
        mapped[i] = feature
    return mapped.reshape(intensities.shape)


def cipher_features(
    img: ImageSample,
    key: PaillierPublicKey | PaillierKeypair,
    codec: FixedPointCodec,
    session_seed: int | bytes,
) -> FeatureVector:
    """Encrypt each pixel deterministically and reduce to [0, 1) features."""
    if img.pixels.shape != (TARGET_SIZE, TARGET_SIZE):
        raise ValueError(f"expected {TARGET_SIZE}x{TARGET_SIZE} pixels, got {img.pixels.shape}")
    values = _cipher_value_map(img.pixels.astype(np.int64).ravel(), key, codec, session_seed)
    return FeatureVector(values=values, label=img.label, encrypted_origin=True)


def cipher_map_values(
    values01: np.ndarray,
    key: PaillierPublicKey | PaillierKeypair,
    codec: FixedPointCodec,
    session_seed: int | bytes,
) -> np.ndarray:
    """Cipher-map arbitrary [0, 1] features via 8-bit quantization."""
    arr = np.asarray(values01, dtype=np.float64)
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError("features must lie in [0, 1] for cipher mapping")
    intensities = np.rint(arr * 255.0).astype(np.int64)
    return _cipher_value_map(intensities, key, codec, session_seed)


def cipher_map_images(
    images: list[ImageSample],
    key: PaillierPublicKey | PaillierKeypair,
    codec: FixedPointCodec,
    session_seed: int | bytes,
) -> tuple[np.ndarray, np.ndarray]:
    """Cipher-feature matrix and labels for a whole image list.

    One call shares the per-intensity cache across all images, so at most
    256 encryptions happen regardless of corpus size.
    """
    if not images:
        return np.empty((0, 0)), np.empty(0, dtype=np.int64)
    stacked = np.stack([img.pixels.astype(np.int64) for img in images])
    mapped = _cipher_value_map(stacked, key, codec, session_seed)
    labels = np.array([img.label for img in images], dtype=np.int64)
    return mapped.reshape(len(images), -1), labels


class CipherFeatureMapper(BaseEstimator, TransformerMixin):
    """Stateless transformer applying the deterministic cipher-feature map."""

    def __init__(self, public_key=None, scale_bits=16, session_seed=0):
        self.public_key = public_key
        self.scale_bits = scale_bits
        self.session_seed = session_seed

    def fit(self, X, y=None):
        if self.public_key is None:
            raise ValueError("CipherFeatureMapper requires a public_key")
        return self

    def transform(self, X):
        codec = FixedPointCodec.for_key(self.public_key, scale_bits=self.scale_bits)
        return cipher_map_values(np.asarray(X), self.public_key, codec, self.session_seed)


# --- synthetic data ----------------------------------------------------------


def gen_synthetic(
    n_samples: int, dim: int, class_separation: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Two unit-variance Gaussian classes at means -/+ separation/2 per dim."""
    if n_samples < 2 or n_samples % 2:
        raise ValueError(f"n_samples must be an even integer >= 2, got {n_samples}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    half = n_samples // 2
    offset = class_separation / 2.0
    X = np.vstack(
        [
            rng.normal(-offset, 1.0, size=(half, dim)),
            rng.normal(offset, 1.0, size=(half, dim)),
        ]
    )
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    order = rng.permutation(n_samples)
    return X[order], y[order]


def gen_synthetic_images(
    n_samples: int,
    image_size: int,
    class_separation: float,
    seed: int,
    noise: float = 24.0,
) -> list[ImageSample]:
    """Image-like two-class data: per-class base intensity plus pixel noise."""
    if n_samples < 2 or n_samples % 2:
        raise ValueError(f"n_samples must be an even integer >= 2, got {n_samples}")
    if image_size < 1:
        raise ValueError(f"image_size must be >= 1, got {image_size}")
    rng = np.random.default_rng(seed)
    means = (128.0 - class_separation / 2.0, 128.0 + class_separation / 2.0)
    samples: list[ImageSample] = []
    for i in range(n_samples):
        label = i % 2
        raw = rng.normal(means[label], noise, size=(image_size, image_size))
        pixels = np.clip(np.rint(raw), 0, 255).astype(np.uint8)
        samples.append(ImageSample(pixels=pixels, label=label, source_id=f"synthetic-{i:05d}"))
    return samples


# --- corpus and feature-directory I/O ----------------------------------------


def list_image_paths(root: str | Path) -> list[Path]:
    """All PGM paths under the tumor/notumor convention, sorted."""
    root = Path(root)
    paths: list[Path] = []
    for dirname in sorted(LABEL_DIRS):
        subdir = root / dirname
        if subdir.is_dir():
            paths.extend(sorted(subdir.glob("*.pgm")))
    return paths


def save_feature_dir(out_dir: str | Path, X: np.ndarray, y: np.ndarray) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "features.npy", np.asarray(X, dtype=np.float64))
    np.save(out / "labels.npy", np.asarray(y, dtype=np.int64))


def load_feature_dir(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    base = Path(path)
    features, labels = base / "features.npy", base / "labels.npy"
    if not features.exists() or not labels.exists():
        raise FileNotFoundError(f"{base} does not contain features.npy and labels.npy")
    return np.load(features), np.load(labels)


def write_manifest(path: str | Path, rows: list[dict]) -> None:
    """CSV with columns path, label, width, height."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["path", "label", "width", "height"])
        writer.writeheader()
        writer.writerows(rows)
