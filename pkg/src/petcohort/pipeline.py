"""End-to-end orchestration: ingest -> annotate -> classify -> report.

Each stage is a plain function over the domain objects, so the `pipeline`
subcommand and the individual subcommands share exactly the same code
paths; running the stages one by one produces byte-identical artifacts.

All outputs are line-delimited JSON or a single sorted-key JSON document.
The run manifest records the configuration, SHA-256 digests of the inputs,
and per-stage wall times; timings are the only nondeterministic part, and
they live in the manifest (never in the report), keeping reports
byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from . import annotate as annotate_mod
from . import corpus as corpus_mod
from .annotate import AnnotationStore, RetryPolicy, is_selfie
from .corpus import Corpus, StudyWindow, UserTimeline
from .demographics import UserDemographics, infer_gender
from .errors import AnnotatorError, ConfigError, UndefinedHappinessError, ValidationError
from .happiness import HappinessIndex, collect_face_images, happiness_index
from .ownership import OwnershipVerdict, classify_owner, extract_pet_posts
from .stats import cohort_report, partition_users

__all__ = [
    "PipelineConfig",
    "PipelineResult",
    "compute_verdicts",
    "compute_happiness",
    "compute_demographics",
    "prepare_inputs",
    "run_pipeline",
]


@dataclass
class PipelineConfig:
    """Every tunable in one place, with the documented defaults."""

    min_selfies: int = 3
    min_area_ratio: float = 0.10
    min_gap_days: float = 7.0
    pet_conf: float = 0.5
    bin_width: float = 10.0
    strict: bool = False
    annotator_url: str | None = None
    retry_attempts: int = 3
    retry_backoff: float = 0.5
    batch_size: int = 100
    window: StudyWindow | None = None
    pool_min_expected: float | None = None
    granularity_days: float | None = None

    def validate(self) -> None:
        if self.min_selfies < 0:
            raise ConfigError(f"min_selfies must be >= 0, got {self.min_selfies}")
        if not 0 < self.min_area_ratio < 1:
            raise ConfigError(f"min_area_ratio must lie in (0, 1), got {self.min_area_ratio}")
        if self.min_gap_days < 0:
            raise ConfigError(f"min_gap_days must be >= 0, got {self.min_gap_days}")
        if not 0 <= self.pet_conf <= 1:
            raise ConfigError(f"pet_conf must lie in [0, 1], got {self.pet_conf}")
        if not 0 < self.bin_width <= 100:
            raise ConfigError(f"bin_width must lie in (0, 100], got {self.bin_width}")
        n = 100.0 / self.bin_width
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"bin_width must divide 100 evenly, got {self.bin_width}")
        if self.retry_attempts < 1:
            raise ConfigError(f"retry_attempts must be >= 1, got {self.retry_attempts}")
        if self.retry_backoff < 0:
            raise ConfigError(f"retry_backoff must be >= 0, got {self.retry_backoff}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pool_min_expected is not None and self.pool_min_expected <= 0:
            raise ConfigError("pool_min_expected must be positive when set")
        if self.granularity_days is not None and self.granularity_days <= 0:
            raise ConfigError("granularity_days must be positive when set")

    def effective_window(self) -> StudyWindow:
        return self.window if self.window is not None else StudyWindow.unbounded()

    def retry_policy(self) -> RetryPolicy:
        return RetryPolicy(max_attempts=self.retry_attempts, backoff_base=self.retry_backoff)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "window":
                d[f.name] = None if value is None else [value.start, value.end]
            else:
                d[f.name] = value
        return d


def prepare_inputs(
    posts_path,
    config: PipelineConfig,
    annotations_path=None,
) -> tuple[Corpus, dict[str, UserTimeline], AnnotationStore, dict]:
    """Ingest posts, build timelines, and obtain annotations.

    Annotations come from ``annotations_path`` when given, otherwise from
    the configured remote annotator (fetch failures are fatal here: an
    incomplete store would silently bias every downstream stage). Returns
    the corpus, timelines, store, and a stage-diagnostics dict.
    """
    diagnostics: dict = {}
    corpus = corpus_mod.ingest_posts(posts_path, strict=config.strict)
    diagnostics["ingest"] = corpus.report.to_dict()
    timelines = corpus_mod.build_timelines(corpus, config.effective_window())

    if annotations_path is not None:
        store = annotate_mod.load_annotations(annotations_path)
        diagnostics["annotations"] = store.report.to_dict()
    elif config.annotator_url:
        refs = sorted({p.image_ref for t in timelines.values() for p in t.posts})
        result = annotate_mod.fetch_annotations(
            refs,
            config.annotator_url,
            retry_policy=config.retry_policy(),
            batch_size=config.batch_size,
        )
        if result.failures:
            raise AnnotatorError(
                f"remote annotator failed for {len(result.failures)} of {len(refs)} images "
                f"(first: {result.failures[0][0]!r}: {result.failures[0][1]})"
            )
        store = result.store
        diagnostics["annotations"] = {"fetched": len(store), "retries": result.n_retries}
    else:
        raise ValidationError("no annotation source: pass an annotations file or an annotator URL")
    return corpus, timelines, store, diagnostics


def eligible_timelines(
    timelines: Mapping[str, UserTimeline],
    store: AnnotationStore,
    config: PipelineConfig,
) -> dict[str, UserTimeline]:
    eligible = corpus_mod.filter_eligible_users(
        timelines, store, config.min_selfies, config.min_area_ratio
    )
    return {u: timelines[u] for u in sorted(eligible)}


def compute_verdicts(
    timelines: Mapping[str, UserTimeline],
    store: AnnotationStore,
    config: PipelineConfig,
) -> dict[str, OwnershipVerdict]:
    """Ownership verdict per eligible user, keyed and ordered by user_id."""
    out: dict[str, OwnershipVerdict] = {}
    for user_id, timeline in eligible_timelines(timelines, store, config).items():
        pet_posts = extract_pet_posts(timeline, store, config.pet_conf)
        out[user_id] = classify_owner(pet_posts, config.min_gap_days, user_id=user_id)
    return out


def compute_happiness(
    timelines: Mapping[str, UserTimeline],
    store: AnnotationStore,
    config: PipelineConfig,
) -> tuple[dict[str, HappinessIndex], list[str]]:
    """Happiness index per eligible user plus the excluded (faceless) users."""
    out: dict[str, HappinessIndex] = {}
    excluded: list[str] = []
    for user_id, timeline in eligible_timelines(timelines, store, config).items():
        face_set = collect_face_images(timeline, store)
        try:
            out[user_id] = happiness_index(face_set)
        except UndefinedHappinessError:
            excluded.append(user_id)
    return out, excluded


def compute_demographics(
    timelines: Mapping[str, UserTimeline],
    store: AnnotationStore,
    config: PipelineConfig,
) -> dict[str, UserDemographics]:
    """Gender verdict per eligible user from that user's selfies."""
    out: dict[str, UserDemographics] = {}
    for user_id, timeline in eligible_timelines(timelines, store, config).items():
        selfies = [
            store.lookup(p.image_ref)
            for p in timeline.posts
            if is_selfie(store.lookup(p.image_ref), config.min_area_ratio)
        ]
        out[user_id] = infer_gender(selfies, user_id=user_id)
    return out


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class PipelineResult:
    report: dict
    manifest: dict
    out_dir: str


def run_pipeline(
    config: PipelineConfig,
    posts_path,
    out_dir,
    annotations_path=None,
) -> PipelineResult:
    """Run every stage and write all artifacts under ``out_dir``.

    Artifacts: verdicts.jsonl, hi.jsonl, demographics.jsonl, report.json,
    manifest.json. Identical inputs and config produce byte-identical
    artifacts except manifest.json, which carries wall-clock timings.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    corpus, timelines, store, diagnostics = prepare_inputs(posts_path, config, annotations_path)
    timings["prepare"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    verdicts = compute_verdicts(timelines, store, config)
    timings["owners"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    hi, hi_excluded = compute_happiness(timelines, store, config)
    timings["happiness"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    demographics = compute_demographics(timelines, store, config)
    timings["demographics"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    partition = partition_users(verdicts, demographics)
    report = cohort_report(
        partition, hi, verdicts, demographics,
        bin_width=config.bin_width,
        pool_min_expected=config.pool_min_expected,
    )
    report["exclusions"]["no_face_images"] = len(hi_excluded)
    report["diagnostics"] = diagnostics
    timings["report"] = time.perf_counter() - t0

    write_jsonl(out / "verdicts.jsonl", (verdicts[u].to_dict() for u in verdicts))
    write_jsonl(out / "hi.jsonl", (hi[u].to_dict() for u in hi))
    write_jsonl(out / "demographics.jsonl", (demographics[u].to_dict() for u in demographics))
    write_report(out / "report.json", report)

    digests = {"posts": sha256_file(posts_path)}
    if annotations_path is not None:
        digests["annotations"] = sha256_file(annotations_path)
    manifest = {
        "config": config.to_dict(),
        "input_digests": digests,
        "stage_seconds": timings,
        "counts": {
            "posts_ingested": len(corpus),
            "users_with_timelines": len(timelines),
            "eligible_users": len(verdicts),
        },
    }
    write_report(out / "manifest.json", manifest)
    return PipelineResult(report=report, manifest=manifest, out_dir=str(out))
