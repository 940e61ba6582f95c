"""Desk-scale metrics: bias-corrected age MAE against an independent
estimator, KID over pooled classifier features, a perceptual reconstruction
proxy, and the blur-strength sweep that maps the identity/age trade-off."""

from __future__ import annotations

import base64
import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .data import DEFAULT_GROUPS, AgeGroup, stack_batch, tensor_to_image
from .errors import ContractError
from .masking import BlurParams
from .model import CuspModel, forward_edit
from .networks import AgeClassifier


# ---------------------------------------------------------------------------
# Attribute clients
# ---------------------------------------------------------------------------

class AttributeClient:
    """Anything that can estimate an attribute (here: age) from images."""

    def estimate_ages(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class LocalAttributeClient(AttributeClient):
    """Wraps a frozen classifier trained separately from the one the editor
    optimizes against, so its errors don't cancel with the training signal."""

    def __init__(self, estimator: AgeClassifier):
        self.estimator = estimator

    def estimate_ages(self, images):
        with torch.no_grad():
            return self.estimator.expected_age(images)


class RemoteAttributeClient(AttributeClient):
    """HTTP stub for an external attribute service. One image per request:
    POST {base_url}/estimate with {"image_b64": ...} -> {"age": float}."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _encode(self, image: torch.Tensor) -> str:
        buf = io.BytesIO()
        tensor_to_image(image).save(buf, format="PNG")
        return base64.b64encode(buf.getvalue()).decode("ascii")

    def estimate_ages(self, images):
        import httpx

        ages = []
        with httpx.Client(timeout=self.timeout) as client:
            for img in images:
                r = client.post(
                    self.base_url + "/estimate", json={"image_b64": self._encode(img)}
                )
                r.raise_for_status()
                ages.append(float(r.json()["age"]))
        return torch.tensor(ages)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def age_mae_corrected(real_ages_by_group, generated_ages, target_group) -> float:
    """MAE of generated-image ages against the mean estimator age of *real*
    images in the target group. Using the group mean rather than the labels
    cancels any constant bias shared by the two measurements."""
    if target_group not in real_ages_by_group:
        raise ContractError(f"unknown target group {target_group!r}")
    real = torch.as_tensor(real_ages_by_group[target_group], dtype=torch.float64)
    gen = torch.as_tensor(generated_ages, dtype=torch.float64)
    if real.numel() == 0 or gen.numel() == 0:
        raise ContractError("empty age list")
    return float((gen - real.mean()).abs().mean())


def _poly3(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    d = a.shape[1]
    return (a @ b.t() / d + 1.0) ** 3


def kid(features_a: torch.Tensor, features_b: torch.Tensor) -> float:
    """Unbiased MMD^2 with the degree-3 polynomial kernel k(x,y)=(x.y/d+1)^3.

    Self terms exclude the diagonal; the cross term averages all pairs.
    """
    a = torch.as_tensor(features_a, dtype=torch.float64)
    b = torch.as_tensor(features_b, dtype=torch.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError("feature sets must be 2-D (n, d)")
    if a.shape[1] != b.shape[1]:
        raise ContractError("feature dimensions differ")
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise ContractError("need at least 2 samples per set")
    k_aa = _poly3(a, a)
    k_bb = _poly3(b, b)
    k_ab = _poly3(a, b)
    term_a = (k_aa.sum() - k_aa.diagonal().sum()) / (m * (m - 1))
    term_b = (k_bb.sum() - k_bb.diagonal().sum()) / (n * (n - 1))
    # summing the cross matrix both ways keeps kid(a, b) == kid(b, a) bitwise
    # (a transposed reduction is free to pair terms differently otherwise)
    cross = (k_ab.sum() + k_ab.t().contiguous().sum()) / (2 * m * n)
    return float(term_a + term_b - 2 * cross)


def pooled_features(clf: AgeClassifier, images: torch.Tensor) -> torch.Tensor:
    """Spatially pooled trunk output; the KID feature space at desk scale."""
    with torch.no_grad():
        h = clf.features(images)
    return h.mean(dim=(2, 3))


def _relu_activations(clf: AgeClassifier, x: torch.Tensor):
    acts = []
    h = x
    for layer in clf.features:
        h = layer(h)
        if isinstance(layer, torch.nn.ReLU):
            acts.append(h)
    return acts


def recon_perceptual(x: torch.Tensor, x_hat: torch.Tensor, clf: AgeClassifier) -> float:
    """Perceptual distance in the frozen classifier's feature stack: each
    layer's channel vectors are unit-normalized per location, squared
    differences averaged over space and channels, then over layers."""
    if x.shape != x_hat.shape:
        raise ContractError("shape mismatch")
    with torch.no_grad():
        layers_x = _relu_activations(clf, x)
        layers_y = _relu_activations(clf, x_hat)
    total = 0.0
    for fx, fy in zip(layers_x, layers_y):
        nx = fx / (fx.norm(dim=1, keepdim=True) + 1e-10)
        ny = fy / (fy.norm(dim=1, keepdim=True) + 1e-10)
        total += float((nx - ny).pow(2).mean())
    return total / len(layers_x)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class GroupMetrics:
    group: str
    age_mae: float
    kid: float
    n_real: int

    def __post_init__(self):
        if self.age_mae < 0:
            raise ContractError("MAE must be >= 0")


@dataclass
class EvalReport:
    recon_l1: float
    recon_perceptual: float
    groups: list = field(default_factory=list)
    real_group_means: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "recon_l1": self.recon_l1,
            "recon_perceptual": self.recon_perceptual,
            "real_group_means": self.real_group_means,
            "groups": [vars(g) for g in self.groups],
        }


def real_ages_by_group(client: AttributeClient, records, groups=DEFAULT_GROUPS):
    """Estimator ages of real images, keyed by the group of their label."""
    images, ages = stack_batch(records)
    est = client.estimate_ages(images)
    out = {g.name: [] for g in groups}
    for a, e in zip(ages.tolist(), est.tolist()):
        for g in groups:
            if g.contains(a):
                out[g.name].append(e)
                break
    return out, images, ages


def evaluate_model(
    model: CuspModel,
    records,
    client: AttributeClient,
    estimator: AgeClassifier | None = None,
    groups=DEFAULT_GROUPS,
    blur: BlurParams | None = None,
    seed: int = 0,
) -> EvalReport:
    """Reconstruction quality plus per-group translation metrics. Every image
    is translated to each group's center age; KID compares pooled estimator
    features of the generated set against real members of that group."""
    blur = blur or BlurParams(0.0, 0.0)
    by_group, images, ages = real_ages_by_group(client, records, groups)
    recon, _ = forward_edit(model, images, ages, blur, noise_seed=seed)
    recon_l1 = float((recon - images).abs().mean())
    percept = recon_perceptual(images, recon, model.classifier)
    kid_clf = estimator if estimator is not None else model.classifier

    report = EvalReport(
        recon_l1=recon_l1,
        recon_perceptual=percept,
        real_group_means={k: float(torch.tensor(v).mean()) for k, v in by_group.items() if v},
    )
    for g in groups:
        if len(by_group[g.name]) < 2:
            continue
        targets = torch.full_like(ages, g.center)
        edited, _ = forward_edit(model, images, targets, blur, noise_seed=seed)
        gen_ages = client.estimate_ages(edited)
        mae = age_mae_corrected(by_group, gen_ages, g.name)
        real_mask = torch.tensor([g.contains(a) for a in ages.tolist()])
        k = kid(pooled_features(kid_clf, images[real_mask]), pooled_features(kid_clf, edited))
        report.groups.append(GroupMetrics(g.name, mae, k, int(real_mask.sum())))
    return report


def write_eval_report(report: EvalReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "eval_report.json"
    csv_path = out / "eval_report.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group", "age_mae", "kid", "n_real"])
        for g in report.groups:
            w.writerow([g.group, f"{g.age_mae:.6f}", f"{g.kid:.6g}", g.n_real])
    return {"json": json_path, "csv": csv_path}


# ---------------------------------------------------------------------------
# Blur-strength sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    sigma_m: float
    sigma_g: float
    age_mae: float
    recon: float


def default_grid(sigma_max: float = 9.0, steps: int = 3):
    vals = [sigma_max * i / (steps - 1) for i in range(steps)] if steps > 1 else [0.0]
    return [BlurParams(m, g) for m in vals for g in vals]


def sweep_sigma(
    model: CuspModel,
    records,
    grid,
    client: AttributeClient,
    target_group: AgeGroup | None = None,
    seed: int = 0,
) -> list[SweepRow]:
    """Evaluate each blur pair: translate every image to the target group's
    center, score estimator age MAE (bias-corrected) and the perceptual
    distance to the input. One row per grid point, grid order preserved."""
    target_group = target_group or DEFAULT_GROUPS[-1]
    by_group, images, ages = real_ages_by_group(client, records)
    if not by_group[target_group.name]:
        raise ContractError(f"no real images in group {target_group.name}")
    targets = torch.full_like(ages, target_group.center)
    rows = []
    for blur in grid:
        edited, _ = forward_edit(model, images, targets, blur, noise_seed=seed)
        gen_ages = client.estimate_ages(edited)
        mae = age_mae_corrected(by_group, gen_ages, target_group.name)
        rows.append(
            SweepRow(blur.sigma_m, blur.sigma_g, mae, recon_perceptual(images, edited, model.classifier))
        )
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sigma_m", "sigma_g", "age_mae", "recon_perceptual"])
        for r in rows:
            w.writerow([f"{r.sigma_m:g}", f"{r.sigma_g:g}", f"{r.age_mae:.6f}", f"{r.recon:.6f}"])
    return Path(path)


def monotone_in_sigma_g(rows, eps: float = 0.05) -> bool:
    """True when, for every fixed sigma_m, recon never drops by more than a
    relative eps as sigma_g increases."""
    cols = {}
    for r in rows:
        cols.setdefault(r.sigma_m, []).append(r)
    for col in cols.values():
        col.sort(key=lambda r: r.sigma_g)
        for prev, nxt in zip(col, col[1:]):
            if nxt.recon < prev.recon * (1 - eps):
                return False
    return True
