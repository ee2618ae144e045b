"""Paired audio/image datasets: manifests, toy data synthesis, image I/O.

A dataset on disk is a root directory with ``audio/<class>/<stem>.wav`` and
``images/<class>/<stem>.{png,jpg,jpeg}``. Pairing is by stem within a class;
class ids follow the sorted audio subdirectory names.
"""

import colorsys
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .audio import (
    PreprocessConfig,
    lms_to_net_input,
    read_lms_cache,
    read_wav,
    waveform_to_lms,
    write_lms_cache,
    write_wav,
)
from .errors import DataError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def one_hot(class_id, n_classes) -> np.ndarray:
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class id {class_id} outside [0, {n_classes})")
    vec = np.zeros(n_classes, dtype=np.float32)
    vec[class_id] = 1.0
    return vec


def tile_label(label, resolution) -> np.ndarray:
    """Broadcast a (K,) label vector into K constant planes of side ``resolution``."""
    label = np.asarray(label, dtype=np.float32)
    if label.ndim != 1:
        raise ValueError("label must be a 1-D vector")
    return np.broadcast_to(label[:, None, None], (label.size, resolution, resolution)).copy()


@dataclass
class SampleEntry:
    audio: str  # path relative to the dataset root
    image: str
    class_id: int
    stem: str


@dataclass
class DatasetManifest:
    """Index of paired samples plus enough metadata to rebuild net inputs."""

    root: str
    classes: list
    resolution: int
    samples: list = field(default_factory=list)
    preprocess: dict = None
    version: int = MANIFEST_VERSION

    @property
    def n_classes(self):
        return len(self.classes)

    def to_dict(self):
        return {
            "version": self.version,
            "classes": list(self.classes),
            "resolution": self.resolution,
            "preprocess": self.preprocess,
            "samples": [
                {"audio": s.audio, "image": s.image, "class_id": s.class_id, "stem": s.stem}
                for s in self.samples
            ],
        }


def save_manifest(manifest: DatasetManifest, path=None) -> str:
    path = path or os.path.join(manifest.root, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(root, path=None) -> DatasetManifest:
    path = path or os.path.join(root, MANIFEST_NAME)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: manifest not found; run the preprocess step first")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: manifest is not valid JSON ({exc})")
    for key in ("version", "classes", "resolution", "samples"):
        if key not in raw:
            raise DataError(f"{path}: manifest missing required key {key!r}")
    if raw["version"] != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {raw['version']}")
    samples = [
        SampleEntry(s["audio"], s["image"], int(s["class_id"]), s["stem"])
        for s in raw["samples"]
    ]
    return DatasetManifest(
        root=root,
        classes=list(raw["classes"]),
        resolution=int(raw["resolution"]),
        samples=samples,
        preprocess=raw.get("preprocess"),
    )


def build_manifest(root, resolution):
    """Scan ``root`` and pair audio with images by stem within each class.

    Classes are the sorted subdirectory names of ``root/audio``. Returns the
    manifest and a list of human-readable notes about unpaired files. A stem
    with more than one image extension is an error, not a silent pick.
    """
    audio_root = os.path.join(root, "audio")
    image_root = os.path.join(root, "images")
    if not os.path.isdir(audio_root):
        raise DataError(f"{root}: no audio/ directory")
    classes = sorted(
        d for d in os.listdir(audio_root) if os.path.isdir(os.path.join(audio_root, d))
    )
    if not classes:
        raise DataError(f"{audio_root}: no class subdirectories")

    samples = []
    unpaired = []
    for class_id, name in enumerate(classes):
        image_dir = os.path.join(image_root, name)
        images = {}
        if os.path.isdir(image_dir):
            for fname in sorted(os.listdir(image_dir)):
                stem, ext = os.path.splitext(fname)
                if ext.lower() not in IMAGE_EXTENSIONS:
                    continue
                if stem in images:
                    raise DataError(
                        f"{image_dir}: ambiguous images for stem {stem!r}: "
                        f"{images[stem]} and {fname}"
                    )
                images[stem] = fname
        audio_dir = os.path.join(audio_root, name)
        matched = set()
        for fname in sorted(os.listdir(audio_dir)):
            stem, ext = os.path.splitext(fname)
            if ext.lower() != ".wav":
                continue
            if stem not in images:
                unpaired.append(f"audio without image: {name}/{fname}")
                continue
            matched.add(stem)
            samples.append(
                SampleEntry(
                    audio=os.path.join("audio", name, fname),
                    image=os.path.join("images", name, images[stem]),
                    class_id=class_id,
                    stem=stem,
                )
            )
        for stem in sorted(set(images) - matched):
            unpaired.append(f"image without audio: {name}/{images[stem]}")
        if not any(s.class_id == class_id for s in samples):
            unpaired.append(f"class with no paired samples: {name}")
    samples.sort(key=lambda s: s.audio)
    manifest = DatasetManifest(root=root, classes=classes, resolution=resolution, samples=samples)
    return manifest, unpaired


# -- image files --------------------------------------------------------------


def read_image(path, resolution=None) -> np.ndarray:
    """Load an RGB image as (3, H, W) float32 in [-1, 1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if resolution is not None and img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})")
    return (arr / 255.0 * 2.0 - 1.0).transpose(2, 0, 1)


def write_image(path, array) -> None:
    """Write a (3, H, W) array in [-1, 1] as an 8-bit RGB PNG."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim != 3 or array.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) array, got shape {array.shape}")
    u8 = np.clip(np.round((array + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def save_image_grid(path, images, ncols=None) -> None:
    """Tile a batch of (3, H, W) images into one PNG, row-major."""
    images = np.asarray(images, dtype=np.float32)
    n = images.shape[0]
    ncols = ncols or n
    nrows = (n + ncols - 1) // ncols
    _, c, h, w = images.shape
    grid = np.full((c, nrows * h, ncols * w), -1.0, dtype=np.float32)
    for i in range(n):
        r, q = divmod(i, ncols)
        grid[:, r * h : (r + 1) * h, q * w : (q + 1) * w] = images[i]
    write_image(path, grid)


# -- toy dataset ---------------------------------------------------------------

TOY_SHAPES = ("circle", "square", "triangle", "diamond")


def _shape_mask(shape, resolution, cx, cy, radius):
    ys, xs = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    if shape == "square":
        return np.maximum(np.abs(xs - cx), np.abs(ys - cy)) <= radius
    if shape == "triangle":
        rel = (ys - (cy - radius)) / (2.0 * radius)
        return (rel >= 0) & (rel <= 1) & (np.abs(xs - cx) <= rel * radius)
    if shape == "diamond":
        return np.abs(xs - cx) + np.abs(ys - cy) <= radius
    raise ValueError(f"unknown shape {shape!r}")


def toy_tone_frequency(class_id, sample_rate) -> float:
    freq = 220.0 * 2.0 ** (class_id / 3.0)
    if freq >= 0.45 * sample_rate:
        raise ValueError(
            f"class {class_id} tone at {freq:.0f} Hz is too close to the "
            f"Nyquist limit for {sample_rate} Hz audio"
        )
    return freq


def toy_class_color(class_id, n_classes) -> np.ndarray:
    """Saturated RGB color in [-1, 1], hues spread evenly over the wheel."""
    rgb = colorsys.hsv_to_rgb(class_id / n_classes, 0.9, 0.9)
    return np.asarray(rgb, dtype=np.float32) * 2.0 - 1.0


def make_toy_dataset(
    root,
    n_classes=4,
    per_class=8,
    resolution=32,
    seed=0,
    sample_rate=16000,
    clip_seconds=0.5,
):
    """Synthesize a small paired dataset: class tones and class shape images.

    Class k sounds like a noisy sine at 220 * 2^(k/3) Hz and looks like a
    colored shape on a dark background. Everything is derived from the seed
    through independent per-sample generators, so regeneration is exact.
    """
    n_samples = int(round(sample_rate * clip_seconds))
    for name in ("audio", "images"):
        os.makedirs(os.path.join(root, name), exist_ok=True)
    for k in range(n_classes):
        class_name = f"class{k:02d}"
        audio_dir = os.path.join(root, "audio", class_name)
        image_dir = os.path.join(root, "images", class_name)
        os.makedirs(audio_dir, exist_ok=True)
        os.makedirs(image_dir, exist_ok=True)
        freq = toy_tone_frequency(k, sample_rate)
        color = toy_class_color(k, n_classes)
        shape = TOY_SHAPES[k % len(TOY_SHAPES)]
        for i in range(per_class):
            stem = f"sample{i:03d}"

            rng = np.random.default_rng([seed, k, i, 0])
            amp = 0.45 + 0.1 * rng.uniform()
            phase = rng.uniform(0.0, 2.0 * np.pi)
            t = np.arange(n_samples) / sample_rate
            tone = amp * np.sin(2.0 * np.pi * freq * t + phase)
            tone += 0.005 * rng.standard_normal(n_samples)
            write_wav(os.path.join(audio_dir, stem + ".wav"), tone, sample_rate)

            rng = np.random.default_rng([seed, k, i, 1])
            cx = resolution / 2.0 + rng.uniform(-0.1, 0.1) * resolution
            cy = resolution / 2.0 + rng.uniform(-0.1, 0.1) * resolution
            radius = rng.uniform(0.25, 0.35) * resolution
            img = np.full((3, resolution, resolution), -0.8, dtype=np.float32)
            mask = _shape_mask(shape, resolution, cx, cy, radius)
            img[:, mask] = color[:, None]
            write_image(os.path.join(image_dir, stem + ".png"), img)

    manifest, unpaired = build_manifest(root, resolution)
    if unpaired:
        raise DataError(f"toy dataset generation left unpaired files: {unpaired}")
    save_manifest(manifest)
    return manifest


# -- batched access ------------------------------------------------------------


class PairedDataset:
    """Loads (spectrogram plane, target image, class id) triples by index.

    Spectrograms are computed from the WAV files on first access unless an
    ``cache_dir`` holds precomputed LMS matrices (written by ``precompute_lms``).
    """

    def __init__(self, manifest: DatasetManifest, preprocess: PreprocessConfig, cache_dir=None):
        self.manifest = manifest
        self.preprocess = preprocess
        self.cache_dir = cache_dir
        self.resolution = manifest.resolution

    def __len__(self):
        return len(self.manifest.samples)

    @property
    def n_classes(self):
        return self.manifest.n_classes

    def _cache_path(self, entry: SampleEntry):
        rel = os.path.splitext(os.path.relpath(entry.audio, "audio"))[0] + ".lms"
        return os.path.join(self.cache_dir, rel)

    def _lms_plane(self, entry: SampleEntry) -> np.ndarray:
        if self.cache_dir is not None:
            cache = self._cache_path(entry)
            if os.path.exists(cache):
                return lms_to_net_input(read_lms_cache(cache), self.resolution)
        samples, rate = read_wav(os.path.join(self.manifest.root, entry.audio))
        spec = waveform_to_lms(samples, rate, self.preprocess)
        return lms_to_net_input(spec.values, self.resolution)

    def example(self, index):
        entry = self.manifest.samples[index]
        lms = self._lms_plane(entry)
        image = read_image(
            os.path.join(self.manifest.root, entry.image), resolution=self.resolution
        )
        return lms, image, entry.class_id

    def batch(self, indices):
        """Stack examples: (B,1,R,R) spectrograms, (B,3,R,R) images, (B,) ids."""
        lms_list, image_list, labels = [], [], []
        for i in indices:
            lms, image, class_id = self.example(i)
            lms_list.append(lms)
            image_list.append(image)
            labels.append(class_id)
        return (
            np.stack(lms_list).astype(np.float32),
            np.stack(image_list).astype(np.float32),
            np.asarray(labels, dtype=np.int64),
        )


def precompute_lms(manifest: DatasetManifest, preprocess: PreprocessConfig, cache_dir):
    """Compute and store the LMS matrix for every manifest sample.

    Returns (written count, [(audio path, reason), ...] failures). On full
    success the preprocessing parameters, including the [-1, 1] min-max
    normalization applied when matrices become net inputs, are recorded in
    the manifest; with failures the manifest is left unstamped.
    """
    count = 0
    failures = []
    for entry in manifest.samples:
        try:
            samples, rate = read_wav(os.path.join(manifest.root, entry.audio))
            spec = waveform_to_lms(samples, rate, preprocess)
        except DataError as exc:
            failures.append((entry.audio, str(exc)))
            continue
        rel = os.path.splitext(os.path.relpath(entry.audio, "audio"))[0] + ".lms"
        path = os.path.join(cache_dir, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        write_lms_cache(path, spec.values)
        count += 1
    if not failures:
        manifest.preprocess = {
            "sample_rate": preprocess.sample_rate,
            "clip_seconds": preprocess.clip_seconds,
            "fft_size": preprocess.fft_size,
            "hop_length": preprocess.hop_length,
            "mel_bins": preprocess.mel_bins,
            "log_floor": preprocess.log_floor,
            "normalization": "per-clip min-max to [-1, 1]",
        }
        save_manifest(manifest)
    return count, failures
