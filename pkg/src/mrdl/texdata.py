"""Synthetic multi-scale texture data, splitting, voting and descriptor I/O.

The generator produces grayscale images whose classes are discriminative
at a designated spatial scale. Every image is a sum of

* a class signal: an oriented sinusoidal grating at the class frequency,
* background gratings in the remaining scale bands, drawn with a random
  orientation per group (identical in distribution across classes),
* band-limited noise.

Classes that share all parameters except their designated band therefore
differ only in the statistics of that band. Images belonging to one
group share base phases and background orientations (with small
per-image jitter), standing in for patches cut from one source image, so
group-aware splitting is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_finite

__all__ = [
    "ClassSpec",
    "SyntheticSpec",
    "Dataset",
    "DataFormatError",
    "BAND_FREQUENCIES",
    "generate",
    "split",
    "majority_vote",
    "write_descriptor_maps",
    "load_descriptor_maps",
    "write_dataset",
    "load_dataset",
]

DESC_MAGIC = b"MRDLDESC"
IMG_MAGIC = b"MRDLIMG1"
MANIFEST_NAME = "manifest.csv"

# Canonical cycles-per-image of each scale band (32 px reference frame).
BAND_FREQUENCIES = {"fine": 9.0, "medium": 5.0, "coarse": 2.0}


class DataFormatError(ValueError):
    """Malformed data file; ``code`` distinguishes the failure mode."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class ClassSpec:
    scale: str  # "fine" | "medium" | "coarse"
    frequency: float  # cycles per image of the class grating
    orientation: float  # wave-vector angle, degrees
    modulation: float = 0.0  # tile-amplitude contrast in [0, 1)

    def __post_init__(self):
        if self.scale not in BAND_FREQUENCIES:
            raise ValueError(f"unknown scale {self.scale!r}; expected one of "
                             f"{sorted(BAND_FREQUENCIES)}")
        if self.frequency <= 0:
            raise ValueError(f"frequency must be > 0, got {self.frequency}")
        if not 0.0 <= self.modulation < 1.0:
            raise ValueError(f"modulation must lie in [0, 1), got {self.modulation}")


def _default_classes() -> tuple[ClassSpec, ...]:
    # Two pairs, each sharing everything except its designated scale.
    # Fine pair: one shared near-Nyquist carrier; class 0 scatters its
    # amplitude over tiles (half at 1+m, half at 1-m, so the per-image
    # mean amplitude matches class 1 exactly and spatially averaged
    # rectified features cannot tell them apart), class 1 is uniform.
    # Coarse pair: a long-wavelength grating at two orientations.
    return (
        ClassSpec("fine", 12.0, 45.0, modulation=0.9),
        ClassSpec("fine", 12.0, 45.0, modulation=0.0),
        ClassSpec("coarse", 2.0, 0.0),
        ClassSpec("coarse", 2.0, 90.0),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[ClassSpec, ...] = field(default_factory=_default_classes)
    image_size: int = 32
    noise: float = 0.06
    patches_per_group: int = 5
    signal_amplitude: float = 0.22
    background_amplitude: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError(f"image size must be >= 8, got {self.image_size}")
        if self.noise < 0:
            raise ValueError(f"noise level must be >= 0, got {self.noise}")
        if self.patches_per_group < 1:
            raise ValueError("patches_per_group must be >= 1")
        if len(self.classes) >= 3:
            scales = {c.scale for c in self.classes}
            if not {"fine", "coarse"} <= scales:
                raise ValueError(
                    "with 3 or more classes both a fine-scale and a coarse-scale "
                    f"discriminative class are required, got scales {sorted(scales)}"
                )


@dataclass
class Dataset:
    images: np.ndarray  # (S, 1, H, W) float64 in [0, 1]
    labels: np.ndarray  # (S,) int64
    groups: np.ndarray  # (S,) int64, image-of-origin id

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.groups[idx])


def _grating(size: int, frequency: float, theta_rad: float, phase: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    wave = (np.cos(theta_rad) * xx + np.sin(theta_rad) * yy) * (frequency / size)
    return np.sin(2.0 * np.pi * wave + phase)


def _band_noise(rng, size: int) -> np.ndarray:
    """Unit-variance noise restricted to mid frequencies (3..12 cyc/frame)."""
    spec = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    fy = np.fft.fftfreq(size) * size
    radius = np.hypot(fy[:, None], fy[None, :])
    lo, hi = 3.0 * size / 32.0, 12.0 * size / 32.0
    spec[(radius < lo) | (radius > hi)] = 0.0
    img = np.fft.ifft2(spec).real
    std = img.std()
    return img / std if std > 0 else img


def _tile_amplitude(rng, size: int, modulation: float) -> np.ndarray:
    """Per-pixel amplitude factor: half the tiles at 1+m, half at 1-m.

    The split is exact, so the image-mean amplitude is exactly 1 for any
    draw; only the spatial spread of local contrast carries information.
    """
    if modulation == 0.0:
        return np.ones((size, size))
    tile = max(size // 4, 1)
    n = size // tile
    flat = np.full(n * n, 1.0 - modulation)
    flat[: (n * n) // 2] = 1.0 + modulation
    grid = rng.permutation(flat).reshape(n, n)
    return np.kron(grid, np.ones((tile, tile)))[:size, :size]


def generate(spec: SyntheticSpec, n_per_class: int) -> Dataset:
    """Deterministic synthetic dataset with ``n_per_class`` images per class."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    size = spec.image_size
    rng = np.random.default_rng(spec.seed)
    images, labels, groups = [], [], []
    group_id = 0
    for label, cls in enumerate(spec.classes):
        theta_sig = np.deg2rad(cls.orientation)
        bg_bands = [b for b in ("fine", "medium", "coarse") if b != cls.scale]
        produced = 0
        while produced < n_per_class:
            take = min(spec.patches_per_group, n_per_class - produced)
            base_phase = rng.uniform(0.0, 2.0 * np.pi)
            bg_theta = rng.uniform(0.0, np.pi, size=len(bg_bands))
            bg_phase = rng.uniform(0.0, 2.0 * np.pi, size=len(bg_bands))
            for _ in range(take):
                img = np.full((size, size), 0.5)
                phase = base_phase + rng.uniform(-0.4, 0.4)
                amp = spec.signal_amplitude * _tile_amplitude(rng, size, cls.modulation)
                img += amp * _grating(size, cls.frequency, theta_sig, phase)
                for bi, band in enumerate(bg_bands):
                    th = bg_theta[bi] + rng.uniform(-0.2, 0.2)
                    ph = bg_phase[bi] + rng.uniform(-0.4, 0.4)
                    img += spec.background_amplitude * _grating(
                        size, BAND_FREQUENCIES[band], th, ph
                    )
                if spec.noise > 0:
                    img += spec.noise * _band_noise(rng, size)
                images.append(np.clip(img, 0.0, 1.0))
                labels.append(label)
                groups.append(group_id)
            group_id += 1
            produced += take
    stacked = np.stack(images)[:, None, :, :]
    return Dataset(stacked, np.asarray(labels, dtype=np.int64), np.asarray(groups, dtype=np.int64))


def split(dataset: Dataset, fraction: float, seed: int):
    """Group-aware split into (train, val); all patches of a group stay together.

    Groups are bucketed by class for a stratified draw; within each class,
    ``round(fraction * n_groups)`` groups go to the training side.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for label in np.unique(dataset.labels):
        mask = dataset.labels == label
        class_groups = np.unique(dataset.groups[mask])
        perm = rng.permutation(len(class_groups))
        n_train = int(round(fraction * len(class_groups)))
        train_groups = set(class_groups[perm[:n_train]].tolist())
        for i in np.flatnonzero(mask):
            (train_idx if dataset.groups[i] in train_groups else val_idx).append(int(i))
    return dataset.subset(np.array(train_idx, dtype=int)), dataset.subset(
        np.array(val_idx, dtype=int)
    )


def majority_vote(patch_labels) -> int:
    """Most frequent class index; ties break toward the lowest index."""
    labels = np.asarray(patch_labels)
    if labels.size == 0:
        raise ValueError("majority_vote: empty label list")
    counts = np.bincount(labels)
    return int(counts.argmax())


# ---------------------------------------------------------------------------
# Descriptor-map files: magic "MRDLDESC", u32 version=1, u32 L, per level
# {u32 N, u32 D, N*D little-endian f32}, then u32 label.
# ---------------------------------------------------------------------------


def write_descriptor_maps(path, descriptor_sets, label: int) -> None:
    with open(path, "wb") as fh:
        fh.write(DESC_MAGIC)
        np.array([1, len(descriptor_sets)], dtype="<u4").tofile(fh)
        for desc in descriptor_sets:
            arr = np.ascontiguousarray(desc, dtype="<f4")
            if arr.ndim != 2:
                raise ValueError(f"descriptor set must be 2-d, got shape {arr.shape}")
            np.array(arr.shape, dtype="<u4").tofile(fh)
            arr.tofile(fh)
        np.array([label], dtype="<u4").tofile(fh)


def _read_exact(fh, nbytes: int, what: str) -> bytes:
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise DataFormatError("truncated", f"file ended while reading {what}")
    return data


def _read_u32(fh, count: int, what: str) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 4 * count, what), dtype="<u4")


def load_descriptor_maps(path):
    """Read a descriptor-map file; returns ``(descriptor_sets, label)``.

    Raises :class:`DataFormatError` with code ``bad_magic``,
    ``bad_version``, ``truncated`` or ``non_finite``.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(DESC_MAGIC))
        if magic != DESC_MAGIC:
            raise DataFormatError("bad_magic", f"not a descriptor-map file: {path}")
        version, n_levels = (int(v) for v in _read_u32(fh, 2, "header"))
        if version != 1:
            raise DataFormatError("bad_version", f"unsupported format version {version}")
        sets = []
        for level in range(n_levels):
            n, d = (int(v) for v in _read_u32(fh, 2, f"level {level} shape"))
            if n < 1 or d < 1:
                raise DataFormatError(
                    "truncated", f"level {level} declares empty shape ({n}, {d})"
                )
            payload = _read_exact(fh, 4 * n * d, f"level {level} payload")
            arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, d)
            if not np.all(np.isfinite(arr)):
                raise DataFormatError(
                    "non_finite", f"level {level} payload contains non-finite values"
                )
            sets.append(arr)
        label = int(_read_u32(fh, 1, "label")[0])
    return sets, label


# ---------------------------------------------------------------------------
# Dataset directories: one image file per sample (magic "MRDLIMG1",
# u32 C/H/W, C*H*W little-endian f32) plus a manifest of
# "path,label,group" lines.
# ---------------------------------------------------------------------------


def _write_image(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(IMG_MAGIC)
        np.array(image.shape, dtype="<u4").tofile(fh)
        np.ascontiguousarray(image, dtype="<f4").tofile(fh)


def _load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(IMG_MAGIC)) != IMG_MAGIC:
            raise DataFormatError("bad_magic", f"not an image file: {path}")
        c, h, w = (int(v) for v in _read_u32(fh, 3, "image shape"))
        payload = _read_exact(fh, 4 * c * h * w, "image payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(c, h, w)
    if not np.all(np.isfinite(arr)):
        raise DataFormatError("non_finite", f"image payload contains non-finite values: {path}")
    return arr


def write_dataset(directory, dataset: Dataset) -> None:
    import os

    os.makedirs(directory, exist_ok=True)
    lines = []
    for i in range(len(dataset)):
        name = f"sample_{i:05d}.bin"
        _write_image(os.path.join(directory, name), dataset.images[i])
        lines.append(f"{name},{int(dataset.labels[i])},{int(dataset.groups[i])}")
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(directory) -> Dataset:
    import os

    manifest = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DataFormatError("bad_magic", f"no {MANIFEST_NAME} in {directory}")
    images, labels, groups = [], [], []
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataFormatError(
                    "truncated", f"{manifest}:{lineno}: expected 'path,label,group'"
                )
            images.append(_load_image(os.path.join(directory, parts[0])))
            labels.append(int(parts[1]))
            groups.append(int(parts[2]))
    if not images:
        raise DataFormatError("truncated", f"{manifest} lists no samples")
    stacked = np.stack(images)
    check_finite(stacked, "dataset images")
    return Dataset(stacked, np.asarray(labels, dtype=np.int64), np.asarray(groups, dtype=np.int64))
