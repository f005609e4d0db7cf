"""Domain-labeled image sets: folder loading, preprocessing, synthetic data, export.

Folder layout is `<root>/<domain>/<frame>.png|jpg`; lexicographic filename
order defines the frame index, and for evaluation sets equal frame index
across domains means the same place. The synthetic generator renders the
same base structure (smooth field plus geometric shapes) under per-domain
appearance transforms, so place correspondence is known by construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError
from .nets import Encoder, encode

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}
DEFAULT_IMAGE_SIZE = (100, 100)


def preprocess(image, size: tuple[int, int] = DEFAULT_IMAGE_SIZE) -> np.ndarray:
    """Decode-agnostic: resize bilinearly, channels-first, [0, 255] -> [-1, 1]."""
    if isinstance(image, np.ndarray):
        if image.size == 0:
            raise DataError(f"zero-area image of shape {image.shape}")
        image = Image.fromarray(image)
    if image.width == 0 or image.height == 0:
        raise DataError("zero-area image")
    h, w = size
    resized = image.convert("RGB").resize((w, h), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


@dataclass
class DomainSet:
    """One appearance domain: ordered frames, path-backed or in-memory."""

    domain_id: str
    image_size: tuple[int, int]
    paths: tuple[Path, ...] | None = None
    arrays: np.ndarray | None = None  # (n, 3, H, W) float32 in [-1, 1]

    def __len__(self) -> int:
        return len(self.paths) if self.paths is not None else len(self.arrays)

    def frame(self, index: int) -> np.ndarray:
        if self.arrays is not None:
            return self.arrays[index]
        path = self.paths[index]
        try:
            with Image.open(path) as img:
                return preprocess(img, self.image_size)
        except (UnidentifiedImageError, OSError) as exc:
            raise DataError(f"cannot decode image {path}: {exc}") from exc

    def frame_path(self, index: int) -> Path | None:
        return self.paths[index] if self.paths is not None else None


class Dataset:
    """Domain sets keyed by id; frame index is the place index in evaluation sets."""

    def __init__(self, domain_sets):
        sets = {s.domain_id: s for s in domain_sets}
        if len(sets) != len(list(domain_sets)):
            raise DataError("duplicate domain ids in dataset")
        self._sets = {d: sets[d] for d in sorted(sets)}

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(self._sets)

    @property
    def image_size(self) -> tuple[int, int]:
        return next(iter(self._sets.values())).image_size

    def domain(self, domain_id: str) -> DomainSet:
        if domain_id not in self._sets:
            raise DataError(f"unknown domain {domain_id!r}, have {list(self._sets)}")
        return self._sets[domain_id]

    def num_frames(self, domain_id: str) -> int:
        return len(self.domain(domain_id))

    def frame(self, domain_id: str, index: int) -> np.ndarray:
        return self.domain(domain_id).frame(index)

    def frames(self, domain_id: str) -> np.ndarray:
        """All frames of one domain stacked to (n, 3, H, W)."""
        ds = self.domain(domain_id)
        if ds.arrays is not None:
            return ds.arrays
        return np.stack([ds.frame(i) for i in range(len(ds))])


def load_domain_sets(root, image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE) -> Dataset:
    """Scan `<root>/<domain>/...` into a Dataset with stable frame indexing."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    domain_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not domain_dirs:
        raise DataError(f"dataset root has no domain subdirectories: {root}")
    sets = []
    for ddir in domain_dirs:
        files = sorted(p for p in ddir.iterdir() if p.is_file())
        bad = [p for p in files if p.suffix.lower() not in IMAGE_EXTENSIONS]
        if bad:
            raise DataError(f"non-image file in domain folder: {bad[0]}")
        if not files:
            raise DataError(f"domain {ddir.name!r} has no images")
        for path in files:  # header-level decode check, full decode stays lazy
            try:
                with Image.open(path):
                    pass
            except (UnidentifiedImageError, OSError) as exc:
                raise DataError(f"cannot decode image {path}: {exc}") from exc
        sets.append(DomainSet(domain_id=ddir.name, image_size=image_size,
                              paths=tuple(files)))
    return Dataset(sets)


# ---------------------------------------------------------------------------
# Synthetic multi-domain data with known place correspondence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainAppearance:
    """Per-domain appearance shift applied to the shared base structure."""

    color_matrix: tuple[tuple[float, float, float], ...]  # 3x3 channel mixing
    color_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gamma: float = 1.0
    texture_amplitude: float = 0.0
    noise_sigma: float = 0.0


IDENTITY_APPEARANCE = DomainAppearance(
    color_matrix=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
)


@dataclass(frozen=True)
class SynthSpec:
    num_places: int = 64
    num_domains: int = 2
    image_size: tuple[int, int] = (32, 32)
    appearances: tuple[DomainAppearance, ...] | None = None  # derived from strength if None
    strength: str = "strong"  # "mild" | "strong", used when appearances is None
    seed: int = 0

    def validate(self) -> None:
        if self.num_places < 2:
            raise ConfigError(f"num_places must be >= 2, got {self.num_places}")
        if self.num_domains < 2:
            raise ConfigError(f"num_domains must be >= 2, got {self.num_domains}")
        h, w = self.image_size
        if h % 4 != 0 or w % 4 != 0 or h < 8 or w < 8:
            raise ConfigError(f"image_size must be multiples of 4 and >= 8, got {h}x{w}")
        if self.appearances is not None and len(self.appearances) != self.num_domains:
            raise ConfigError(
                f"got {len(self.appearances)} appearances for {self.num_domains} domains"
            )
        if self.appearances is None and self.strength not in ("mild", "strong"):
            raise ConfigError(f"strength must be 'mild' or 'strong', got {self.strength!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        if self.appearances is not None:
            d["appearances"] = [asdict(a) for a in self.appearances]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["image_size"] = tuple(d.get("image_size", (32, 32)))
        if d.get("appearances"):
            apps = []
            for a in d["appearances"]:
                a = dict(a)
                a["color_matrix"] = tuple(tuple(row) for row in a["color_matrix"])
                a["color_shift"] = tuple(a.get("color_shift", (0.0, 0.0, 0.0)))
                apps.append(DomainAppearance(**a))
            d["appearances"] = tuple(apps)
        else:
            d["appearances"] = None
        return cls(**d)


def appearance_presets(num_domains: int, strength: str,
                       rng: np.random.Generator) -> tuple[DomainAppearance, ...]:
    """Randomized per-domain transforms; 'strong' mixes and inverts channels."""
    apps = [IDENTITY_APPEARANCE if strength == "strong" else _mild_appearance(rng)]
    for _ in range(1, num_domains):
        apps.append(_strong_appearance(rng) if strength == "strong" else _mild_appearance(rng))
    return tuple(apps)


def _mild_appearance(rng) -> DomainAppearance:
    m = np.eye(3) + rng.uniform(-0.05, 0.05, (3, 3))
    return DomainAppearance(
        color_matrix=tuple(tuple(float(v) for v in row) for row in m),
        color_shift=tuple(float(v) for v in rng.uniform(-0.03, 0.03, 3)),
        gamma=float(rng.uniform(0.92, 1.08)),
        texture_amplitude=float(rng.uniform(0.0, 0.05)),
        noise_sigma=0.005,
    )


def _strong_appearance(rng) -> DomainAppearance:
    # random channel permutation, per-channel gain with random sign (possible
    # contrast inversion), blended with a desaturating average
    perm = np.eye(3)[rng.permutation(3)]
    signs = rng.choice([-1.0, 1.0], size=3)
    gains = rng.uniform(0.6, 1.0, size=3) * signs
    mix = 0.75 * perm * gains[:, None] + 0.25 * np.full((3, 3), 1.0 / 3.0)
    # keep mid-gray fixed so outputs stay in a usable range
    shift = 0.5 - 0.5 * mix.sum(axis=1)
    gamma = float(rng.uniform(0.45, 0.65) if rng.random() < 0.5 else rng.uniform(1.6, 2.2))
    return DomainAppearance(
        color_matrix=tuple(tuple(float(v) for v in row) for row in mix),
        color_shift=tuple(float(v) for v in shift),
        gamma=gamma,
        texture_amplitude=float(rng.uniform(0.2, 0.35)),
        noise_sigma=0.02,
    )


def _base_structure(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Shared scene content: smooth field plus 2-4 hard-edged shapes, tinted RGB."""
    fld = gaussian_filter(rng.standard_normal((h, w)), sigma=max(2.0, min(h, w) / 8.0))
    fld = (fld - fld.min()) / (np.ptp(fld) + 1e-12)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(2, 5))):
        kind = int(rng.integers(0, 3))
        intensity = float(rng.uniform(0.0, 1.0))
        if kind == 0:  # rectangle
            y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
            y1 = y0 + rng.integers(h // 6, h // 2)
            x1 = x0 + rng.integers(w // 6, w // 2)
            mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        elif kind == 1:  # ellipse
            cy, cx = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.2 * w, 0.8 * w)
            ry, rx = rng.uniform(h / 8, h / 3), rng.uniform(w / 8, w / 3)
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:  # thick stripe
            angle = rng.uniform(0, np.pi)
            offset = rng.uniform(-0.3, 0.3) * min(h, w)
            dist = (yy - h / 2) * np.cos(angle) - (xx - w / 2) * np.sin(angle) - offset
            mask = np.abs(dist) < rng.uniform(1.0, max(2.0, min(h, w) / 8))
        fld = np.where(mask, 0.75 * intensity + 0.25 * fld, fld)
    tint = rng.uniform(0.6, 1.0, size=3)
    return np.clip(fld[None, :, :] * tint[:, None, None], 0.0, 1.0)


def _texture_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Per-domain overlay: filtered noise plus a sinusoidal grating, in [-1, 1]."""
    noise = gaussian_filter(rng.standard_normal((h, w)), sigma=1.5)
    noise = noise / (np.abs(noise).max() + 1e-12)
    yy, xx = np.mgrid[0:h, 0:w]
    fy, fx = rng.uniform(1.0, 4.0, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    grating = np.sin(2 * np.pi * (fy * yy / h + fx * xx / w) + phase)
    return 0.5 * noise + 0.5 * grating


def _render(base: np.ndarray, appearance: DomainAppearance, texture: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
    img = np.power(np.clip(base, 0.0, 1.0), appearance.gamma)
    mat = np.asarray(appearance.color_matrix, dtype=np.float64)
    img = np.einsum("ij,jhw->ihw", mat, img)
    img += np.asarray(appearance.color_shift, dtype=np.float64)[:, None, None]
    img *= 1.0 + appearance.texture_amplitude * texture[None, :, :]
    if appearance.noise_sigma > 0:
        img += rng.normal(0.0, appearance.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return (2.0 * img - 1.0).astype(np.float32)


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministic multi-domain dataset where frame index == place index."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    appearances = spec.appearances or appearance_presets(spec.num_domains, spec.strength, rng)
    h, w = spec.image_size
    bases = [_base_structure(rng, h, w) for _ in range(spec.num_places)]
    textures = [_texture_field(rng, h, w) for _ in range(spec.num_domains)]
    sets = []
    for k in range(spec.num_domains):
        frames = np.stack([
            _render(bases[p], appearances[k], textures[k], rng)
            for p in range(spec.num_places)
        ])
        sets.append(DomainSet(domain_id=f"d{k}", image_size=spec.image_size, arrays=frames))
    return Dataset(sets)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """[-1, 1] channels-first float -> (H, W, 3) uint8."""
    arr = np.clip((frame.transpose(1, 2, 0) + 1.0) * 127.5, 0.0, 255.0)
    return np.round(arr).astype(np.uint8)


def write_image_folders(dataset: Dataset, root, spec: SynthSpec | None = None) -> Path:
    """Materialize a dataset as `<root>/<domain>/<frame>.png` plus a manifest."""
    root = Path(root)
    entries = []
    for domain in dataset.domain_ids:
        ddir = root / domain
        ddir.mkdir(parents=True, exist_ok=True)
        for i in range(dataset.num_frames(domain)):
            frame = dataset.frame(domain, i)
            path = ddir / f"{i:05d}.png"
            Image.fromarray(to_uint8(frame)).save(path)
            entries.append({
                "domain": domain,
                "index": i,
                "place": i,
                "file": str(path.relative_to(root)),
                "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            })
    manifest = {
        "domains": list(dataset.domain_ids),
        "num_frames": {d: dataset.num_frames(d) for d in dataset.domain_ids},
        "image_size": list(dataset.image_size),
        "correspondence": "frame index equals place index",
        "spec": spec.to_dict() if spec is not None else None,
        "entries": entries,
    }
    manifest_path = root / "dataset_manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return manifest_path


# ---------------------------------------------------------------------------
# Representation export
# ---------------------------------------------------------------------------

def _array_checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def export_representations(encoder: Encoder, dataset: Dataset, out_dir,
                           batch_size: int = 16) -> Path:
    """Encode every frame of every domain to .npy files plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    encoder.eval()
    for domain in dataset.domain_ids:
        n = dataset.num_frames(domain)
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            batch = np.stack([dataset.frame(domain, i) for i in range(start, stop)])
            with torch.no_grad():
                reps = encode(encoder, torch.from_numpy(batch), source_domain=domain)
            values = reps.values.numpy()
            for offset in range(stop - start):
                index = start + offset
                arr = np.ascontiguousarray(values[offset])
                name = f"{domain}_{index:05d}.npy"
                try:
                    np.save(out_dir / name, arr)
                except OSError as exc:
                    raise DataError(f"cannot write representation {out_dir / name}: {exc}") from exc
                entries.append({
                    "domain": domain,
                    "index": index,
                    "file": name,
                    "shape": list(arr.shape),
                    "dtype": str(arr.dtype),
                    "sha256": _array_checksum(arr),
                })
    manifest = {
        "domains": list(dataset.domain_ids),
        "num_frames": {d: dataset.num_frames(d) for d in dataset.domain_ids},
        "entries": entries,
    }
    manifest_path = out_dir / "representations.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return manifest_path


def load_representations(manifest_path, verify: bool = True) -> dict[str, np.ndarray]:
    """Read an export back as {domain: (n, C, H, W) array}, checksum-verified."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"representation manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    by_domain: dict[str, dict[int, np.ndarray]] = {}
    for entry in manifest["entries"]:
        path = base / entry["file"]
        if not path.exists():
            raise DataError(f"representation file missing: {path}")
        arr = np.load(path)
        if verify and _array_checksum(arr) != entry["sha256"]:
            raise DataError(f"checksum mismatch for {path}")
        by_domain.setdefault(entry["domain"], {})[entry["index"]] = arr
    out = {}
    for domain, frames in by_domain.items():
        out[domain] = np.stack([frames[i] for i in sorted(frames)])
    return out
