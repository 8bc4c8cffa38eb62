"""Dataset generation, ingestion, encoding and persistence.

Binary data lives in ``BinaryDataset``: a matrix of entries in a
declared encoding plus provenance. The bit-to-basis-index convention is
the shared one from :mod:`doem.basis` (big-endian bits); it is applied
identically by the empirical-density builder and the model layer.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .basis import basis_indices_of_rows
from .errors import IdxFormatError, ValidationError
from .linalg import MAX_EXACT_QUBITS, DensityOperator

ZERO_ONE = "zero-one"
PLUS_MINUS = "plus-minus"

DATASET_MAGIC = b"BDS1"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_DIM_CAP = 100_000_000


@dataclass(eq=False)
class BinaryDataset:
    """N rows of d_V binary entries in a declared encoding, plus a
    provenance record (source file or generator spec and seed)."""

    d_v: int
    rows: np.ndarray
    encoding: str = ZERO_ONE
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.d_v:
            raise ValidationError(f"rows shape {self.rows.shape} does not match d_v={self.d_v}")
        allowed = {0, 1} if self.encoding == ZERO_ONE else {-1, 1}
        present = set(np.unique(self.rows).tolist())
        if not present <= allowed:
            raise ValidationError(
                f"entries {sorted(present)} are not in the {self.encoding} encoding"
            )

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def bits(self) -> np.ndarray:
        """Rows as 0/1 bits regardless of encoding."""
        if self.encoding == PLUS_MINUS:
            return ((self.rows.astype(np.int8) + 1) // 2).astype(np.uint8)
        return self.rows.astype(np.uint8)

    def with_encoding(self, encoding: str) -> "BinaryDataset":
        if encoding == self.encoding:
            return self
        bits = self.bits()
        rows = bits if encoding == ZERO_ONE else (2 * bits.astype(np.int8) - 1)
        return BinaryDataset(self.d_v, rows, encoding, dict(self.provenance))


# ---------------------------------------------------------------------------
# Mixture-of-Bernoulli generator
# ---------------------------------------------------------------------------


@dataclass
class BernoulliMixtureSpec:
    n_bits: int
    n_modes: int
    success_prob: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if not 0.0 < self.success_prob < 1.0:
            raise ValidationError("success probability must lie strictly between 0 and 1")
        if self.n_modes < 1:
            raise ValidationError("need at least one mode")
        if self.n_bits < 1 or self.n_samples < 1:
            raise ValidationError("n_bits and n_samples must be positive")
        if self.n_bits > 20:
            raise ValidationError("exact-table path supports at most 20 bits")


def gen_bernoulli_mixture(spec: BernoulliMixtureSpec):
    """Sample the mixture and emit the exact probability table alongside.

    Modes are basis indices drawn uniformly without replacement (when
    the space allows); a sample picks a mode uniformly and keeps each
    mode bit with the success probability. The exact table averages,
    over modes, p^(N-d) (1-p)^d with d the Hamming distance to the mode.
    """
    rng = np.random.default_rng(spec.seed)
    n, m, p = spec.n_bits, spec.n_modes, spec.success_prob
    space = 2**n
    replace = m > space
    modes = rng.choice(space, size=m, replace=replace).astype(np.uint64)

    choice = rng.integers(0, m, size=spec.n_samples)
    shifts = np.arange(n - 1, 0 - 1, -1, dtype=np.uint64)
    mode_bits = ((modes[choice][:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    keep = rng.random((spec.n_samples, n)) < p
    rows = np.where(keep, mode_bits, 1 - mode_bits).astype(np.uint8)

    idx = np.arange(space, dtype=np.uint64)
    table = np.zeros(space)
    for mode in modes:
        d = np.bitwise_count(np.bitwise_xor(idx, mode)).astype(np.int64)
        table += p ** (n - d) * (1.0 - p) ** d
    table /= m

    dataset = BinaryDataset(
        d_v=n,
        rows=rows,
        encoding=ZERO_ONE,
        provenance={
            "generator": "bernoulli-mixture",
            "n_bits": n,
            "n_modes": m,
            "success_prob": p,
            "n_samples": spec.n_samples,
            "seed": spec.seed,
            "modes": [int(x) for x in modes],
        },
    )
    return dataset, table


def table_to_csv(table: np.ndarray) -> str:
    lines = ["index,probability"]
    for i, v in enumerate(table):
        lines.append(f"{i},{float(v)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# IDX container
# ---------------------------------------------------------------------------


def read_idx(path) -> np.ndarray:
    """Read an IDX image or label file (raw or gzip, auto-detected).

    Returns images as a (n, rows, cols) uint8 tensor or labels as a
    (n,) uint8 vector.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX magic at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_LABELS_MAGIC:
        ndim = 1
    elif magic == IDX_IMAGES_MAGIC:
        ndim = 3
    else:
        raise IdxFormatError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated dimension header, need {header} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    if any(d > IDX_DIM_CAP for d in dims):
        raise IdxFormatError(f"{path}: dimension overflow in header: {dims}")
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise IdxFormatError(
            f"{path}: truncated payload, expected {expected} bytes but got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    return data.reshape(dims)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Pixel encodings
# ---------------------------------------------------------------------------


def binarize_1bit(images: np.ndarray, threshold: int = 128, provenance: dict | None = None) -> BinaryDataset:
    """One bit per pixel: pixel >= threshold -> 1; row-major flatten."""
    images = _require_u8(images)
    rows = (images.reshape(images.shape[0], -1) >= threshold).astype(np.uint8)
    prov = dict(provenance or {})
    prov.update({"pixel_encoding": "1bit", "threshold": int(threshold)})
    return BinaryDataset(rows.shape[1], rows, ZERO_ONE, prov)


def encode_8bit_planes(images: np.ndarray, provenance: dict | None = None) -> BinaryDataset:
    """Eight bits per pixel, most significant first, pixel-major then
    bit-major (all 8 bits of a pixel are consecutive)."""
    images = _require_u8(images)
    flat = images.reshape(images.shape[0], -1)
    rows = np.unpackbits(flat, axis=1, bitorder="big")
    prov = dict(provenance or {})
    prov.update({"pixel_encoding": "8bit-planes", "bit_order": "msb-first"})
    return BinaryDataset(rows.shape[1], rows, ZERO_ONE, prov)


def decode_8bit_planes(rows: np.ndarray, image_shape: tuple[int, int]) -> np.ndarray:
    """Inverse of the 8-bit plane encoding back to u8 images."""
    rows = np.asarray(rows, dtype=np.uint8)
    pixels = np.packbits(rows, axis=1, bitorder="big")
    return pixels.reshape(rows.shape[0], *image_shape)


def _require_u8(images) -> np.ndarray:
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise ValidationError(f"expected uint8 pixel data, got {images.dtype}")
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise ValidationError(f"expected (n, height, width) images, got shape {images.shape}")
    return images


def downscale(images: np.ndarray, factor) -> np.ndarray:
    """Block-average downscaling for desk-scale runs.

    Integer factors must divide the image side. ``factor=3.5`` is the
    fixed 28 -> 8 kernel: block boundaries at ceil(i * 3.5), i.e.
    alternating 4- and 3-pixel blocks. Means are rounded to nearest u8.
    """
    images = _require_u8(images)
    n, h, w = images.shape
    if factor == 1:
        return images.copy()
    if factor == 3.5:
        if (h, w) != (28, 28):
            raise ValidationError("the 3.5x kernel applies to 28x28 images only")
        bounds = [int(np.ceil(i * 3.5)) for i in range(9)]
    else:
        factor = int(factor)
        if factor < 1 or h % factor or w % factor:
            raise ValidationError(f"factor {factor} does not divide image side {h}")
        bounds = list(range(0, h + 1, factor))
    k = len(bounds) - 1
    out = np.empty((n, k, k), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            block = images[:, bounds[i] : bounds[i + 1], bounds[j] : bounds[j + 1]]
            out[:, i, j] = block.mean(axis=(1, 2))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Empirical densities
# ---------------------------------------------------------------------------


def empirical_table(dataset: BinaryDataset) -> dict[int, Fraction]:
    """Sparse exact table of empirical frequencies by basis index;
    Fractions over the row count, so the entries sum to exactly 1."""
    idx = basis_indices_of_rows(dataset.bits())
    n = dataset.n_rows
    counts: dict[int, int] = {}
    for i in idx.tolist():
        counts[i] = counts.get(i, 0) + 1
    return {i: Fraction(c, n) for i, c in sorted(counts.items())}


def empirical_density(dataset: BinaryDataset) -> DensityOperator:
    """Diagonal density operator of empirical basis-state frequencies;
    dense, so refused above the exact-path cap."""
    if dataset.d_v > MAX_EXACT_QUBITS:
        raise ValidationError(
            f"dense empirical density refused above {MAX_EXACT_QUBITS} visible units "
            f"(got {dataset.d_v}); use empirical_table instead"
        )
    dim = 2**dataset.d_v
    idx = basis_indices_of_rows(dataset.bits())
    counts = np.bincount(idx, minlength=dim).astype(np.float64)
    probs = counts / dataset.n_rows
    return DensityOperator(np.diag(probs.astype(np.complex128)), (dim,))


def empirical_probs(dataset: BinaryDataset) -> np.ndarray:
    idx = basis_indices_of_rows(dataset.bits())
    counts = np.bincount(idx, minlength=2**dataset.d_v)
    return counts / dataset.n_rows


# ---------------------------------------------------------------------------
# Dataset container + manifest
# ---------------------------------------------------------------------------

_ENC_TAG = {ZERO_ONE: 0, PLUS_MINUS: 1}
_TAG_ENC = {v: k for k, v in _ENC_TAG.items()}


def save_dataset(path, dataset: BinaryDataset) -> None:
    """Versioned binary dump (bit-packed rows) plus a JSON manifest
    sidecar carrying dims, provenance and a payload hash."""
    path = Path(path)
    bits = dataset.bits()
    packed = np.packbits(bits, axis=1)
    header = DATASET_MAGIC + struct.pack(
        "<QIB", dataset.n_rows, dataset.d_v, _ENC_TAG[dataset.encoding]
    )
    payload = header + packed.tobytes()
    path.write_bytes(payload)
    manifest = {
        "n_rows": dataset.n_rows,
        "d_v": dataset.d_v,
        "encoding": dataset.encoding,
        "provenance": dataset.provenance,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path.with_suffix(path.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True)
    )


def load_dataset(path) -> BinaryDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 17 or raw[:4] != DATASET_MAGIC:
        raise ValidationError(f"not a dataset file (bad magic) at {path}")
    n_rows, d_v, enc_tag = struct.unpack("<QIB", raw[4:17])
    if enc_tag not in _TAG_ENC:
        raise ValidationError(f"unknown encoding tag {enc_tag} in dataset file")
    row_bytes = (d_v + 7) // 8
    expected = 17 + n_rows * row_bytes
    if len(raw) != expected:
        raise ValidationError(
            f"dataset payload truncated: expected {expected} bytes, got {len(raw)}"
        )
    packed = np.frombuffer(raw, dtype=np.uint8, offset=17).reshape(n_rows, row_bytes)
    bits = np.unpackbits(packed, axis=1, count=d_v)
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    provenance = {}
    if manifest_path.exists():
        provenance = json.loads(manifest_path.read_text()).get("provenance", {})
    ds = BinaryDataset(d_v, bits, ZERO_ONE, provenance)
    return ds.with_encoding(_TAG_ENC[enc_tag])


# ---------------------------------------------------------------------------
# PGM output
# ---------------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) grayscale image."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValidationError("PGM output needs a 2-D uint8 image")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + image.tobytes())


def tile_images(images: np.ndarray, columns: int = 8, pad: int = 1, pad_value: int = 0) -> np.ndarray:
    """Tile a stack of images into one grid image with separators."""
    images = _require_u8(images)
    n, h, w = images.shape
    columns = max(1, min(columns, n))
    rows = (n + columns - 1) // columns
    grid = np.full(
        (rows * h + (rows - 1) * pad, columns * w + (columns - 1) * pad),
        pad_value,
        dtype=np.uint8,
    )
    for i in range(n):
        r, c = divmod(i, columns)
        grid[r * (h + pad) : r * (h + pad) + h, c * (w + pad) : c * (w + pad) + w] = images[i]
    return grid
