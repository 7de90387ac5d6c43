"""Deterministic synthetic cohort: age-scaled body phantoms with labeled blobs.

A phantom is an axis-aligned body ellipsoid containing K labeled organ
blobs at fixed body-relative positions; the whole geometry scales linearly
with age from 0.45 at birth to 1.0 at 17+, mimicking the body-size gap
between young children and adults.  Organ intensities are chosen so that
blobs come in near-identical pairs (inner/outer along one direction, 6 HU
apart, masked by noise) plus two uniquely bright anchors: telling paired
blobs apart requires position, which is what makes a coordinate-sensitive
segmenter age-biased, while the anchors keep every phantom partly easy.

Everything is reproducible: per-case RNG seeds derive from the cohort seed
and case index, so cases can be generated in parallel without changing
their content.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import CaseRecord, save_manifest
from .errors import ParameterError
from .volume import LabelVolume, ScalarVolume, write_volume

__all__ = [
    "OrganDef",
    "PhantomSpec",
    "DEFAULT_ORGANS",
    "body_scale",
    "generate_case",
    "generate_cohort",
    "DEFAULT_BIN_WEIGHTS",
]

AIR_INTENSITY = -1000.0
BODY_INTENSITY = 40.0

# Body ellipsoid semi-axes as fractions of volume extent (before age scaling).
BODY_SEMI_AXES = (0.40, 0.37, 0.43)

MIN_BODY_SCALE = 0.45
ADULT_AGE = 17.0


@dataclass(frozen=True)
class OrganDef:
    """One organ blob: center offset from volume center (fractions of the
    volume extent, applied before age scaling), radius, mean intensity."""

    offset: tuple[float, float, float]
    radius: float
    intensity: float


# Three inner/outer pairs sharing an intensity within the pair (6 HU apart,
# below the default noise), plus two bright anchors with unique intensities.
# Offsets and radii leave >= 0.026 clearance between any two blobs and keep
# every blob inside the body ellipsoid, worst-case jitter included.
DEFAULT_ORGANS = (
    OrganDef((+0.12, 0.00, 0.02), 0.055, 200.0),
    OrganDef((+0.30, 0.00, 0.02), 0.065, 206.0),
    OrganDef((-0.12, 0.03, 0.00), 0.055, 320.0),
    OrganDef((-0.30, 0.03, 0.00), 0.065, 326.0),
    OrganDef((0.00, +0.12, -0.02), 0.055, 440.0),
    OrganDef((0.00, +0.28, -0.02), 0.065, 446.0),
    OrganDef((0.03, -0.21, 0.05), 0.070, 560.0),
    OrganDef((-0.03, -0.03, 0.24), 0.070, 680.0),
)

DEFAULT_BIN_WEIGHTS = {
    "0-3": 0.30,
    "4-6": 0.25,
    "7-9": 0.20,
    "10-12": 0.15,
    "13-16": 0.10,
}

_JITTER = 0.008  # per-axis organ center jitter, fractions of extent (pre-scale)
_MAX_JITTER_RETRIES = 20


def body_scale(age_years: float) -> float:
    """Linear body scale: 0.45 at age 0 up to 1.0 at age 17 and beyond."""
    if age_years < 0:
        raise ParameterError(f"age must be non-negative, got {age_years}")
    frac = min(float(age_years), ADULT_AGE) / ADULT_AGE
    return MIN_BODY_SCALE + (1.0 - MIN_BODY_SCALE) * frac


@dataclass(frozen=True)
class PhantomSpec:
    """Everything needed to synthesize one case deterministically."""

    age_years: float
    seed: int
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    noise_sigma: float = 20.0
    organs: tuple[OrganDef, ...] = DEFAULT_ORGANS

    def __post_init__(self) -> None:
        if len(self.organs) > 19:
            raise ParameterError("at most 19 organs are supported")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if any(d < 8 for d in self.dims):
            raise ParameterError("phantom dims must be at least 8 voxels per axis")

    @property
    def num_organs(self) -> int:
        return len(self.organs)

    @property
    def scale(self) -> float:
        return body_scale(self.age_years)


def _organ_centers(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Jittered organ centers (normalized coords); retries on overlap."""
    scale = spec.scale
    base = np.array([o.offset for o in spec.organs], dtype=np.float64)
    radii = np.array([o.radius for o in spec.organs], dtype=np.float64) * scale
    semi = np.asarray(BODY_SEMI_AXES) * scale
    for _ in range(_MAX_JITTER_RETRIES):
        jitter = rng.uniform(-_JITTER, _JITTER, size=base.shape) * scale
        centers = 0.5 + base * scale + jitter
        sep = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        need = radii[:, None] + radii[None, :]
        np.fill_diagonal(sep, np.inf)
        overlap = bool((sep <= need).any())
        outside = bool((np.abs(centers - 0.5) + radii[:, None] > semi[None, :]).any())
        if not overlap and not outside:
            return centers
    raise ParameterError(
        "could not place organs without overlap; organ layout too crowded"
    )


def generate_case(
    spec: PhantomSpec, case_id: str = "case_0000", path_prefix: str = "volumes"
) -> tuple[ScalarVolume, LabelVolume, CaseRecord]:
    """Synthesize one phantom; bitwise deterministic in (spec, case_id)."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    centers = _organ_centers(spec, rng)
    scale = spec.scale
    nx, ny, nz = spec.dims
    ux = ((np.arange(nx) + 0.5) / nx).reshape(-1, 1, 1)
    uy = ((np.arange(ny) + 0.5) / ny).reshape(1, -1, 1)
    uz = ((np.arange(nz) + 0.5) / nz).reshape(1, 1, -1)

    semi = np.asarray(BODY_SEMI_AXES) * scale
    body = (
        ((ux - 0.5) / semi[0]) ** 2
        + ((uy - 0.5) / semi[1]) ** 2
        + ((uz - 0.5) / semi[2]) ** 2
    ) <= 1.0

    labels = np.zeros(spec.dims, dtype=np.int32)
    image = np.where(body, BODY_INTENSITY, AIR_INTENSITY)
    for organ_id, (organ, center) in enumerate(zip(spec.organs, centers), start=1):
        r = organ.radius * scale
        inside = (
            ((ux - center[0]) / r) ** 2
            + ((uy - center[1]) / r) ** 2
            + ((uz - center[2]) / r) ** 2
        ) <= 1.0
        labels[inside] = organ_id
        image[inside] = organ.intensity

    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=spec.dims)

    domain = "adult" if spec.age_years >= ADULT_AGE else "pediatric"
    record = CaseRecord(
        case_id=case_id,
        age_years=float(spec.age_years),
        domain=domain,
        image=f"{path_prefix}/{case_id}_image.nii.gz",
        label=f"{path_prefix}/{case_id}_label.nii.gz",
    )
    scalar = ScalarVolume(image.astype(np.float32), spec.spacing)
    label = LabelVolume(labels, spec.spacing, num_classes=spec.num_organs)
    return scalar, label, record


def _draw_ages(rng, n_adult: int, n_pediatric: int, bin_weights) -> list[float]:
    """Adult ages uniform in [17, 70); pediatric ages by per-bin weights."""
    bounds = {"0-3": (0.0, 4.0), "4-6": (4.0, 7.0), "7-9": (7.0, 10.0),
              "10-12": (10.0, 13.0), "13-16": (13.0, 17.0)}
    names = list(bounds)
    weights = np.array([float(bin_weights[b]) for b in names])
    if (weights < 0).any() or weights.sum() <= 0:
        raise ParameterError(f"bad pediatric bin weights {bin_weights}")
    weights = weights / weights.sum()
    ages = [float(a) for a in rng.uniform(ADULT_AGE, 70.0, size=n_adult)]
    picks = rng.choice(len(names), size=n_pediatric, p=weights)
    for k in picks:
        low, high = bounds[names[int(k)]]
        ages.append(float(rng.uniform(low, high)))
    return ages


def generate_cohort(
    out_dir,
    n_adult: int,
    n_pediatric: int,
    seed: int = 0,
    bin_weights=None,
    dims: tuple[int, int, int] = (48, 48, 48),
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0),
    noise_sigma: float = 20.0,
    organs: tuple[OrganDef, ...] = DEFAULT_ORGANS,
    threads: int = 1,
) -> list[CaseRecord]:
    """Write a full phantom cohort (volumes + ``manifest.json``) to disk."""
    if n_adult < 1 or n_pediatric < 1:
        raise ParameterError("cohort needs at least one adult and one pediatric case")
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA6E5)))
    ages = _draw_ages(rng, n_adult, n_pediatric, bin_weights or DEFAULT_BIN_WEIGHTS)

    jobs = []
    for index, age in enumerate(ages):
        domain = "adult" if age >= ADULT_AGE else "pediatric"
        case_id = f"{domain}_{index:04d}"
        case_seed = np.random.SeedSequence((seed, index)).generate_state(1)[0]
        spec = PhantomSpec(
            age_years=age,
            seed=int(case_seed),
            dims=dims,
            spacing=spacing,
            noise_sigma=noise_sigma,
            organs=organs,
        )
        jobs.append((spec, case_id))

    def build(job):
        spec, case_id = job
        image, label, record = generate_case(spec, case_id)
        write_volume(image, out_dir / record.image)
        write_volume(label, out_dir / record.label)
        return record

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(build, jobs))
    else:
        records = [build(job) for job in jobs]
    save_manifest(records, out_dir / "manifest.json")
    return records
