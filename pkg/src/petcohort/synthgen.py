"""Seeded synthetic corpora: posts, annotations, and ground truth.

The generator builds users whose posting patterns exercise every pipeline
rule by construction:

* owners get at least two same-type pet posts more than a week apart;
* a configurable slice of non-owners are "pet lovers" whose pet posts all
  land inside a single week-long burst;
* every user gets at least three selfies (single face, area safely above
  the 10% rule), so the whole population is eligibility-clean;
* smile confidences are truncated normals on [0, 100] with per-cohort
  (gender x ownership) means, so cohort separation is tunable;
* predicted pet labels are the true labels pushed through a 3x3 row-
  stochastic confusion matrix (identity = noiseless).

Randomness comes from a single seeded PCG64 generator, so equal configs
produce byte-identical files. The seed and generator name are recorded in
the manifest next to the ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = ["SynthConfig", "SynthCorpus", "generate_corpus", "DEFAULT_LABEL_NOISE", "IDENTITY_LABEL_NOISE"]

SECONDS_PER_DAY = 86400
RNG_NAME = "pcg64"

# Measured error rates of a three-class pet classifier (rows: true cat, dog,
# other; columns: predicted cat, dog, other).
DEFAULT_LABEL_NOISE = (
    (0.962, 0.019, 0.019),
    (0.008, 0.977, 0.015),
    (0.004, 0.006, 0.990),
)
IDENTITY_LABEL_NOISE = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
)

_LABEL_ORDER = ("cat", "dog", "other")

# June through December 2015, UTC.
DEFAULT_WINDOW = (1433116800, 1448928000)

_COHORT_KEYS = ("male_owner", "male_non_owner", "female_owner", "female_non_owner")


def _default_smile_means() -> dict[str, float]:
    return {
        "male_owner": 50.0,
        "male_non_owner": 40.0,
        "female_owner": 56.0,
        "female_non_owner": 48.0,
    }


def _default_smile_sds() -> dict[str, float]:
    return {key: 12.0 for key in _COHORT_KEYS}


@dataclass
class SynthConfig:
    """Knobs for one synthetic corpus."""

    seed: int = 0
    n_users: int = 1000
    owner_fraction: float = 0.338
    gender_mix: float = 1557 / 2905  # female fraction
    posts_min: int = 8
    posts_max: int = 16
    smile_means: dict[str, float] = field(default_factory=_default_smile_means)
    smile_sds: dict[str, float] = field(default_factory=_default_smile_sds)
    pet_label_noise: tuple = DEFAULT_LABEL_NOISE
    selfie_rate: float = 0.35
    pet_lover_fraction: float = 0.25  # of non-owners
    group_photo_rate: float = 0.15  # of leftover posts
    min_selfies: int = 3
    window: tuple = DEFAULT_WINDOW

    def validate(self) -> None:
        if self.n_users < 0:
            raise ConfigError(f"n_users must be >= 0, got {self.n_users}")
        for name in ("owner_fraction", "gender_mix", "selfie_rate",
                     "pet_lover_fraction", "group_photo_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        noise = np.asarray(self.pet_label_noise, dtype=np.float64)
        if noise.shape != (3, 3) or (noise < 0).any():
            raise ConfigError("pet_label_noise must be a nonnegative 3x3 matrix")
        if np.abs(noise.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfigError("pet_label_noise rows must each sum to 1")
        for table, kind in ((self.smile_means, "mean"), (self.smile_sds, "sd")):
            for key in _COHORT_KEYS:
                if key not in table:
                    raise ConfigError(f"smile {kind} missing cohort {key!r}")
                if kind == "mean" and not 0 <= table[key] <= 100:
                    raise ConfigError(f"smile mean for {key!r} outside [0, 100]")
                if kind == "sd" and table[key] <= 0:
                    raise ConfigError(f"smile sd for {key!r} must be positive")
        if not 1 <= self.posts_min <= self.posts_max:
            raise ConfigError(
                f"need 1 <= posts_min <= posts_max, got [{self.posts_min}, {self.posts_max}]"
            )
        start, end = self.window
        if not start < end:
            raise ConfigError(f"window start must precede end, got [{start}, {end})")
        if end - start <= 8 * SECONDS_PER_DAY:
            raise ConfigError("window must span more than 8 days to fit an owner gap")
        if self.min_selfies < 1:
            raise ConfigError(f"min_selfies must be >= 1, got {self.min_selfies}")
        # Every post count in range must leave room for the selfie floor plus
        # two owner pet posts.
        for n in range(self.posts_min, self.posts_max + 1):
            if n - self._n_selfies(n) < 2:
                raise ConfigError(
                    f"posts_per_user={n} cannot hold {self._n_selfies(n)} selfies "
                    "plus 2 pet posts; raise posts_min or lower selfie_rate"
                )

    def _n_selfies(self, n_posts: int) -> int:
        return max(self.min_selfies, int(round(self.selfie_rate * n_posts)))

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if isinstance(cfg.pet_label_noise, list):
            cfg.pet_label_noise = tuple(tuple(row) for row in cfg.pet_label_noise)
        if isinstance(cfg.window, list):
            cfg.window = tuple(cfg.window)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pet_label_noise"] = [list(row) for row in self.pet_label_noise]
        d["window"] = list(self.window)
        return d


@dataclass
class SynthCorpus:
    """Generated records plus the truth they were derived from."""

    posts: list[dict]
    annotations: list[dict]
    ground_truth: list[dict]
    image_truth: list[dict]  # per-image true vs predicted pet label
    manifest: dict

    def post_lines(self):
        return (json.dumps(p, separators=(",", ":")) for p in self.posts)

    def annotation_lines(self):
        return (json.dumps(a, separators=(",", ":")) for a in self.annotations)

    def ground_truth_lines(self):
        return (json.dumps(g, separators=(",", ":")) for g in self.ground_truth)

    def image_truth_lines(self):
        return (json.dumps(t, separators=(",", ":")) for t in self.image_truth)

    def write(self, out_dir) -> dict[str, str]:
        """Write all artifacts under ``out_dir``; returns name -> path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, lines in (
            ("posts.jsonl", self.post_lines()),
            ("annotations.jsonl", self.annotation_lines()),
            ("ground_truth.jsonl", self.ground_truth_lines()),
            ("image_truth.jsonl", self.image_truth_lines()),
        ):
            path = out / name
            with open(path, "w", encoding="utf-8") as fh:
                for line in lines:
                    fh.write(line + "\n")
            paths[name] = str(path)
        manifest_path = out / "manifest.json"
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
        paths["manifest.json"] = str(manifest_path)
        return paths


def _truncated_normal(rng, mean: float, sd: float, size: int) -> np.ndarray:
    """Exact rejection sampling of a normal truncated to [0, 100]."""
    out = np.empty(size, dtype=np.float64)
    have = 0
    while have < size:
        draw = rng.normal(mean, sd, size=(size - have) * 2)
        good = draw[(draw >= 0.0) & (draw <= 100.0)]
        take = min(good.size, size - have)
        out[have:have + take] = good[:take]
        have += take
    return out


def _round6(x) -> float:
    return round(float(x), 6)


def _selfie_face(rng, smile: float, gender: str) -> dict:
    # Area comfortably above the 10% selfie threshold even after rounding.
    area = rng.uniform(0.12, 0.45)
    aspect = rng.uniform(0.75, 1.3)
    w = min(0.95, float(np.sqrt(area * aspect)))
    h = min(0.95, area / w)
    x = rng.uniform(0.0, max(0.0, 0.99 - w))
    y = rng.uniform(0.0, max(0.0, 0.99 - h))
    face = {
        "bbox": [_round6(x), _round6(y), _round6(w), _round6(h)],
        "smile": _round6(smile),
        "gender": gender,
        "gender_conf": _round6(rng.uniform(0.7, 0.99)),
    }
    if rng.random() < 0.8:
        face["age"] = _round6(rng.uniform(18.0, 45.0))
    if rng.random() < 0.05:
        face["race"] = "white"
    return face


def _extra_face(rng, biggest_area: float) -> dict:
    # Strictly smaller than the biggest face so the tie-break never fires.
    area = biggest_area * rng.uniform(0.3, 0.8)
    w = float(np.sqrt(area))
    h = area / w
    x = rng.uniform(0.0, max(0.0, 0.99 - w))
    y = rng.uniform(0.0, max(0.0, 0.99 - h))
    return {
        "bbox": [_round6(x), _round6(y), _round6(w), _round6(h)],
        "smile": _round6(rng.uniform(0.0, 100.0)),
        "gender": "male" if rng.random() < 0.5 else "female",
        "gender_conf": _round6(rng.uniform(0.5, 0.99)),
    }


def _group_faces(rng, owner_smile: float) -> list[dict]:
    """2-4 faces; the biggest one carries the account owner's smile."""
    n_extra = int(rng.integers(1, 4))
    biggest_area = rng.uniform(0.05, 0.15)
    w = float(np.sqrt(biggest_area))
    h = biggest_area / w
    x = rng.uniform(0.0, max(0.0, 0.99 - w))
    y = rng.uniform(0.0, max(0.0, 0.99 - h))
    biggest = {
        "bbox": [_round6(x), _round6(y), _round6(w), _round6(h)],
        "smile": _round6(owner_smile),
        "gender": "male" if rng.random() < 0.5 else "female",
        "gender_conf": _round6(rng.uniform(0.5, 0.99)),
    }
    return [biggest] + [_extra_face(rng, biggest_area) for _ in range(n_extra)]


def _noisy_label(rng, true_klass: str, cum_noise: np.ndarray) -> str:
    row = cum_noise[_LABEL_ORDER.index(true_klass)]
    r = rng.random()
    if r < row[0]:
        return "cat"
    if r < row[1]:
        return "dog"
    return "other"


def generate_corpus(config: SynthConfig) -> SynthCorpus:
    """Generate one corpus; equal configs yield identical output."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    cum_noise = np.cumsum(np.asarray(config.pet_label_noise, dtype=np.float64), axis=1)
    start, end = config.window
    gap = 7 * SECONDS_PER_DAY  # ownership threshold; owners exceed it, bursts stay inside

    posts: list[dict] = []
    annotations: list[dict] = []
    ground_truth: list[dict] = []
    image_truth: list[dict] = []

    for i in range(config.n_users):
        user_id = f"u{i:05d}"
        gender = "female" if rng.random() < config.gender_mix else "male"
        is_owner = rng.random() < config.owner_fraction
        is_lover = (not is_owner) and rng.random() < config.pet_lover_fraction
        pet_type = None
        if is_owner or is_lover:
            pet_type = "cat" if rng.random() < 0.5 else "dog"
        cohort = f"{gender}_{'owner' if is_owner else 'non_owner'}"
        mean = config.smile_means[cohort]
        sd = config.smile_sds[cohort]

        n_posts = int(rng.integers(config.posts_min, config.posts_max + 1))
        n_selfies = config._n_selfies(n_posts)
        budget = n_posts - n_selfies
        if is_owner:
            n_pet = min(2 + int(rng.poisson(1.0)), budget)
        elif is_lover:
            n_pet = min(1 + int(rng.integers(0, 5)), budget)
        else:
            n_pet = 0
        n_rest = budget - n_pet
        n_group = int(rng.binomial(n_rest, config.group_photo_rate)) if n_rest else 0
        n_plain = n_rest - n_group

        # Pet post timestamps first: they carry the timeline structure.
        pet_times: list[int] = []
        if is_owner:
            t1 = int(rng.integers(start, end - gap - 2))
            t2 = int(rng.integers(t1 + gap + 1, end))
            pet_times = [t1, t2]
            pet_times += [int(t) for t in rng.integers(start, end, size=n_pet - 2)]
        elif is_lover and n_pet:
            burst_start = int(rng.integers(start, end - gap))
            pet_times = [burst_start + int(o) for o in rng.integers(0, gap + 1, size=n_pet)]

        entries: list[tuple[int, str, list | None, str]] = []  # (ts, kind, faces, true_klass)
        smiles = _truncated_normal(rng, mean, sd, n_selfies + n_group)
        for k in range(n_selfies):
            ts = int(rng.integers(start, end))
            entries.append((ts, "selfie", [_selfie_face(rng, smiles[k], gender)], "other"))
        for k in range(n_group):
            ts = int(rng.integers(start, end))
            entries.append((ts, "group", _group_faces(rng, smiles[n_selfies + k]), "other"))
        for ts in pet_times:
            entries.append((ts, "pet", None, pet_type))
        for _ in range(n_plain):
            ts = int(rng.integers(start, end))
            entries.append((ts, "plain", None, "other"))

        true_hi_mean = mean
        ground_truth.append({
            "user_id": user_id,
            "is_owner": bool(is_owner),
            "pet_type": pet_type if is_owner else None,
            "gender": gender,
            "true_hi_mean": true_hi_mean,
        })

        for j, (ts, kind, faces, true_klass) in enumerate(entries):
            post_id = f"{user_id}-p{j:03d}"
            image_ref = f"img-{post_id}"
            posts.append({
                "post_id": post_id,
                "user_id": user_id,
                "timestamp": ts,
                "image_ref": image_ref,
            })
            predicted = _noisy_label(rng, true_klass, cum_noise)
            annotations.append({
                "image_ref": image_ref,
                "pet": {"klass": predicted, "confidence": _round6(rng.uniform(0.6, 0.99))},
                "faces": faces or [],
            })
            image_truth.append({
                "image_ref": image_ref,
                "true_klass": true_klass,
                "predicted_klass": predicted,
            })

    manifest = {
        "rng": RNG_NAME,
        "seed": config.seed,
        "config": config.to_dict(),
        "counts": {
            "users": config.n_users,
            "posts": len(posts),
            "annotations": len(annotations),
        },
    }
    return SynthCorpus(
        posts=posts,
        annotations=annotations,
        ground_truth=ground_truth,
        image_truth=image_truth,
        manifest=manifest,
    )
