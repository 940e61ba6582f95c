"""Dataset ingestion and the procedural toy-face corpus.

Toy faces encode age twice: in texture (horizontal wrinkle stripes whose
frequency grows linearly with age) and in geometry (face width grows, the
hair band shrinks). The stripe frequency is analytically recoverable from the
rendered image, which gives a ground-truth age oracle that needs no learned
model.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ContractError

log = logging.getLogger(__name__)

AGE_LO = 20.0
AGE_HI = 69.0

# stripe frequency in cycles per image height, linear in age
STRIPE_F_MIN = 6.0
STRIPE_F_MAX = 16.0
STRIPE_AMP = 0.22
# face half-width gain from youngest to oldest, in pixels at 64x64
WIDTH_SLOPE_PX = 6.0


@dataclass
class ToyFaceSpec:
    """Identity parameters plus the age that couples into the rendering."""

    age: float
    axis_x: float  # base face half-width (age 20), px at 64x64
    axis_y: float  # face half-height, px at 64x64
    hue: float  # in [0, 1], tints skin/hair/background
    eye_spacing: float  # px at 64x64

    def __post_init__(self):
        if not AGE_LO <= self.age <= AGE_HI:
            raise ContractError(f"age {self.age} outside [{AGE_LO}, {AGE_HI}]")

    @property
    def age_t(self) -> float:
        return (self.age - AGE_LO) / (AGE_HI - AGE_LO)

    def with_age(self, age: float) -> "ToyFaceSpec":
        return ToyFaceSpec(age, self.axis_x, self.axis_y, self.hue, self.eye_spacing)


def sample_identity(rng: np.random.Generator, age: float | None = None) -> ToyFaceSpec:
    if age is None:
        age = float(rng.uniform(AGE_LO, AGE_HI))
    return ToyFaceSpec(
        age=age,
        axis_x=float(rng.uniform(11.0, 14.0)),
        axis_y=float(rng.uniform(20.0, 23.0)),
        hue=float(rng.uniform(0.0, 1.0)),
        eye_spacing=float(rng.uniform(10.0, 14.0)),
    )


def stripe_frequency(age: float) -> float:
    t = (age - AGE_LO) / (AGE_HI - AGE_LO)
    return STRIPE_F_MIN + (STRIPE_F_MAX - STRIPE_F_MIN) * t


def face_half_width(spec: ToyFaceSpec) -> float:
    return spec.axis_x + WIDTH_SLOPE_PX * spec.age_t


def render_toy_face(spec: ToyFaceSpec, resolution: int = 64) -> torch.Tensor:
    """Deterministic procedural rendering to a (3, H, W) tensor in [-1, 1]."""
    s = resolution / 64.0
    h = w = resolution
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = 32.0 * s, 34.0 * s

    ax = face_half_width(spec) * s
    ay = spec.axis_y * s
    face = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0

    skin = np.array([0.86, 0.70 + 0.10 * np.sin(2 * np.pi * spec.hue), 0.58])
    hair_color = np.array(
        [0.25 + 0.1 * spec.hue, 0.18, 0.30 - 0.1 * spec.hue]
    )
    bg = 0.80 + 0.06 * np.cos(2 * np.pi * spec.hue)

    img = np.full((h, w, 3), bg, dtype=np.float64)
    img[..., 1] *= 0.98
    img[..., 2] *= 1.02

    # wrinkle stripes: luminance modulation over the whole face
    stripes = 1.0 + STRIPE_AMP * np.sin(2 * np.pi * stripe_frequency(spec.age) * yy / h)
    img[face] = skin[None, :] * stripes[face][:, None]

    # hair: top band of the head ellipse, thinning with age
    thickness = (0.45 - 0.35 * spec.age_t) * ay
    hair = face & (yy < cy - ay + thickness)
    img[hair] = hair_color[None, :]

    # eyes: two dark disks above the sampling band
    ey = cy - 8.0 * s
    for sign in (-1.0, 1.0):
        ex = cx + sign * spec.eye_spacing * s / 2.0
        eye = ((xx - ex) / (2.2 * s)) ** 2 + ((yy - ey) / (1.4 * s)) ** 2 <= 1.0
        img[eye] = np.array([0.12, 0.10, 0.14])[None, :]

    img = np.clip(img, 0.0, 1.0) * 2.0 - 1.0
    return torch.from_numpy(img.transpose(2, 0, 1)).float()


def estimate_age_from_image(img: torch.Tensor, resolution: int | None = None) -> float:
    """Closed-form age readout: matched-filter stripe-frequency measurement in
    a band of the face interior, inverted through the rendering's linear
    frequency-age map."""
    arr = img.detach().cpu().numpy()
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected (3,H,W), got {arr.shape}")
    h = arr.shape[1]
    s = h / 64.0
    cx, cy = 32.0 * s, 34.0 * s
    y0, y1 = int(round(cy - 2 * s)), int(round(cy + 18 * s)) + 1
    x0, x1 = int(round(cx - 4 * s)), int(round(cx + 4 * s)) + 1
    band = arr.mean(axis=0)[y0:y1, x0:x1].mean(axis=1)
    # Hann taper keeps spectral leakage from biasing the short-window peak
    band = (band - band.mean()) * np.hanning(len(band))
    ys = np.arange(y0, y1, dtype=np.float64)
    step = 0.02
    freqs = np.arange(4.0, 18.0, step)
    phases = np.exp(-2j * np.pi * freqs[:, None] * ys[None, :] / h)
    response = np.abs(phases @ band)
    i = int(np.argmax(response))
    f_hat = freqs[i]
    if 0 < i < len(freqs) - 1:
        # parabolic refinement around the grid peak
        a, b, c = response[i - 1], response[i], response[i + 1]
        denom = a - 2 * b + c
        if abs(denom) > 1e-12:
            f_hat = freqs[i] + step * 0.5 * (a - c) / denom
    t = (f_hat - STRIPE_F_MIN) / (STRIPE_F_MAX - STRIPE_F_MIN)
    return float(np.clip(AGE_LO + t * (AGE_HI - AGE_LO), AGE_LO, AGE_HI))


# ---------------------------------------------------------------------------
# Records, groups, ingestion
# ---------------------------------------------------------------------------

@dataclass
class AgedImageRecord:
    image: torch.Tensor  # (3, H, W) in [-1, 1]
    age_label: int
    source_id: str

    def __post_init__(self):
        if not AGE_LO <= self.age_label <= AGE_HI:
            raise ContractError(
                f"age label {self.age_label} outside [{int(AGE_LO)}, {int(AGE_HI)}]"
            )


@dataclass(frozen=True)
class AgeGroup:
    lo: int
    hi: int
    center: int

    @property
    def name(self) -> str:
        return f"{self.lo}-{self.hi}"

    def contains(self, age: float) -> bool:
        return self.lo <= age <= self.hi


DEFAULT_GROUPS = (
    AgeGroup(20, 29, 25),
    AgeGroup(30, 39, 35),
    AgeGroup(40, 49, 45),
    AgeGroup(50, 69, 55),
)


def age_to_group(a: float, groups=DEFAULT_GROUPS) -> int:
    """Index of the age group containing a; outside any group is an error."""
    for i, g in enumerate(groups):
        if g.lo <= a <= g.hi:
            return i
    raise ContractError(f"age {a} outside all groups")


def make_toy_dataset(n: int, seed: int, resolution: int = 64) -> list[AgedImageRecord]:
    """n independent identities with ages uniform over the full range."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        spec = sample_identity(rng)
        label = int(np.clip(round(spec.age), AGE_LO, AGE_HI))
        records.append(
            AgedImageRecord(
                image=render_toy_face(spec, resolution),
                age_label=label,
                source_id=f"toy-{seed}-{i:05d}",
            )
        )
    return records


def _load_labels(labels_file) -> dict[str, int]:
    labels = {}
    with open(labels_file, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row or row[0].strip().startswith("#"):
                continue
            if i == 0 and [c.strip().lower() for c in row] == ["source_id", "age"]:
                continue  # optional header
            if len(row) != 2:
                raise ContractError(f"malformed label row: {row!r}")
            try:
                labels[row[0].strip()] = int(round(float(row[1])))
            except ValueError as e:
                raise ContractError(f"malformed age in label row: {row!r}") from e
    return labels


def tensor_to_image(t: torch.Tensor) -> Image.Image:
    """Inverse of image_to_tensor's normalization: [-1,1] tensor to RGB PIL."""
    if t.ndim != 3 or t.shape[0] != 3:
        raise ContractError(f"expected (3,H,W) image tensor, got {tuple(t.shape)}")
    arr = ((t.clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    return Image.fromarray(arr.permute(1, 2, 0).cpu().numpy())


def image_to_tensor(img: Image.Image, resolution: int) -> torch.Tensor:
    """Center-crop to square, resize, normalize so 0 -> -1.0 and 255 -> +1.0."""
    img = img.convert("RGB")
    side = min(img.size)
    left = (img.width - side) // 2
    top = (img.height - side) // 2
    img = img.crop((left, top, left + side, top + side))
    img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


def load_folder(path, labels_file=None, resolution: int = 64, classifier=None):
    """Stream AgedImageRecords from an image folder.

    Labels come from a `source_id,age` CSV; without one, a classifier must be
    supplied and its argmax age fills them in. Unreadable images are skipped
    with a warning; a missing or malformed label is an error.
    """
    path = Path(path)
    if labels_file is None and classifier is None:
        raise ContractError("need either a labels_file or a classifier")
    labels = _load_labels(labels_file) if labels_file is not None else None
    files = sorted(
        p for p in path.iterdir()
        if p.suffix.lower() in {".png", ".jpg", ".jpeg"}
    )
    for p in files:
        try:
            with Image.open(p) as img:
                tensor = image_to_tensor(img, resolution)
        except OSError:
            log.warning("skipping unreadable image %s", p)
            continue
        if labels is not None:
            key = p.name if p.name in labels else p.stem
            if key not in labels:
                raise ContractError(f"no label for {p.name}")
            age = labels[key]
        else:
            with torch.no_grad():
                logits = classifier.classify_age(tensor[None]).logits
            age = int(logits.argmax(dim=-1).item()) + classifier.cfg.age_min
        yield AgedImageRecord(image=tensor, age_label=age, source_id=p.stem)


def stack_batch(records) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.stack([r.image for r in records])
    ages = torch.tensor([r.age_label for r in records], dtype=torch.long)
    return images, ages
