"""Per-image detector outputs behind one annotation interface.

An annotation record joins a three-class pet label (cat / dog / other) with
zero or more face observations for a single image:

    {"image_ref": str,
     "pet": {"klass": "cat"|"dog"|"other", "confidence": float},
     "faces": [{"bbox": [x, y, w, h], "smile": float,
                "gender": "male"|"female", "gender_conf": float,
                "age": float?, "race": str?}]}

Bounding boxes are fractions of the image dimensions. Smile confidences are
on a 0-100 scale. Stores are immutable after load and safe for shared reads.

Two rules implemented here drive the rest of the pipeline:

* ``is_selfie``: exactly one face whose bbox area strictly exceeds 10% of
  the image (configurable ratio, strict inequality).
* ``biggest_face``: the largest-area face; in a multi-face image only this
  face's smile counts.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import requests

__all__ = [
    "PET_CLASSES",
    "GENDERS",
    "PetLabel",
    "FaceObservation",
    "ImageAnnotation",
    "AnnotationStore",
    "LoadReport",
    "RetryPolicy",
    "FetchResult",
    "load_annotations",
    "fetch_annotations",
    "biggest_face",
    "is_selfie",
]

logger = logging.getLogger(__name__)

PET_CLASSES = ("cat", "dog", "other")
GENDERS = ("male", "female")

# Slack for fractional-coordinate sums so 0.3 + 0.7 style inputs survive
# float rounding.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class PetLabel:
    """Argmax pet class with its confidence."""

    klass: str
    confidence: float


@dataclass(frozen=True)
class FaceObservation:
    """One detected face: fractional bbox, smile score, demographics."""

    x: float
    y: float
    w: float
    h: float
    smile_confidence: float
    gender: str
    gender_confidence: float
    age: float | None = None
    race: str | None = None

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ImageAnnotation:
    """Joined detector record for one image."""

    image_ref: str
    pet: PetLabel
    faces: tuple[FaceObservation, ...] = ()


def missing_annotation(image_ref: str) -> ImageAnnotation:
    """Fail-safe stand-in for an unannotated image: no face, no pet."""
    return ImageAnnotation(image_ref=image_ref, pet=PetLabel("other", 0.0), faces=())


@dataclass
class LoadReport:
    """Accept/reject accounting for one annotation load."""

    total: int = 0
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "n_rejected": len(self.rejected),
            "rejected": [{"line": n, "reason": r} for n, r in self.rejected],
        }


class AnnotationStore:
    """Immutable image_ref -> annotation map with a provenance tag."""

    def __init__(self, annotations: Iterable[ImageAnnotation] = (), provenance: str = "file"):
        if provenance not in ("file", "remote", "synthetic"):
            raise ValueError(f"unknown provenance {provenance!r}")
        self.provenance = provenance
        self._by_ref: dict[str, ImageAnnotation] = {}
        for ann in annotations:
            if ann.image_ref in self._by_ref:
                raise ValueError(f"duplicate image_ref {ann.image_ref!r}")
            self._by_ref[ann.image_ref] = ann
        self.report = LoadReport(total=len(self._by_ref), accepted=len(self._by_ref))

    def __len__(self) -> int:
        return len(self._by_ref)

    def __contains__(self, image_ref: str) -> bool:
        return image_ref in self._by_ref

    def get(self, image_ref: str) -> ImageAnnotation | None:
        return self._by_ref.get(image_ref)

    def lookup(self, image_ref: str) -> ImageAnnotation:
        """Annotation for ``image_ref``, or the no-face fallback if absent."""
        ann = self._by_ref.get(image_ref)
        return ann if ann is not None else missing_annotation(image_ref)

    def refs(self) -> list[str]:
        return sorted(self._by_ref)

    def to_jsonl(self) -> str:
        """Canonical line-delimited serialization, ordered by image_ref."""
        return "".join(
            annotation_to_json(self._by_ref[ref]) + "\n" for ref in self.refs()
        )


def _validate_face(obj) -> FaceObservation:
    if not isinstance(obj, dict):
        raise ValueError("face is not an object")
    bbox = obj.get("bbox")
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise ValueError("bbox must be [x, y, w, h]")
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise ValueError("bbox values must be numbers") from None
    if x < 0 or y < 0:
        raise ValueError(f"bbox origin must be nonnegative, got ({x}, {y})")
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox sides must be positive, got ({w}, {h})")
    if x + w > 1 + _EDGE_TOL or y + h > 1 + _EDGE_TOL:
        raise ValueError("bbox exceeds image bounds")
    smile = obj.get("smile")
    if not isinstance(smile, (int, float)) or isinstance(smile, bool):
        raise ValueError("smile must be a number")
    if not 0 <= smile <= 100:
        raise ValueError(f"smile must lie in [0, 100], got {smile}")
    gender = obj.get("gender")
    if gender not in GENDERS:
        raise ValueError(f"gender must be one of {GENDERS}, got {gender!r}")
    gconf = obj.get("gender_conf")
    if not isinstance(gconf, (int, float)) or isinstance(gconf, bool) or not 0 <= gconf <= 1:
        raise ValueError(f"gender_conf must lie in [0, 1], got {gconf!r}")
    age = obj.get("age")
    if age is not None and (not isinstance(age, (int, float)) or isinstance(age, bool) or age < 0):
        raise ValueError(f"age must be a nonnegative number, got {age!r}")
    race = obj.get("race")
    if race is not None and not isinstance(race, str):
        raise ValueError("race must be a string when present")
    return FaceObservation(
        x=x, y=y, w=w, h=h,
        smile_confidence=float(smile),
        gender=gender,
        gender_confidence=float(gconf),
        age=float(age) if age is not None else None,
        race=race,
    )


def validate_annotation(obj) -> ImageAnnotation:
    """Check one parsed record against the annotation schema."""
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    ref = obj.get("image_ref")
    if not isinstance(ref, str) or not ref:
        raise ValueError("image_ref must be a nonempty string")
    pet = obj.get("pet")
    if not isinstance(pet, dict):
        raise ValueError("pet must be an object")
    klass = pet.get("klass")
    if klass not in PET_CLASSES:
        raise ValueError(f"pet.klass must be one of {PET_CLASSES}, got {klass!r}")
    conf = pet.get("confidence")
    if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not 0 <= conf <= 1:
        raise ValueError(f"pet.confidence must lie in [0, 1], got {conf!r}")
    faces_obj = obj.get("faces", [])
    if not isinstance(faces_obj, list):
        raise ValueError("faces must be a list")
    faces = tuple(_validate_face(f) for f in faces_obj)
    return ImageAnnotation(image_ref=ref, pet=PetLabel(klass, float(conf)), faces=faces)


def annotation_to_dict(ann: ImageAnnotation) -> dict:
    faces = []
    for f in ann.faces:
        d = {
            "bbox": [f.x, f.y, f.w, f.h],
            "smile": f.smile_confidence,
            "gender": f.gender,
            "gender_conf": f.gender_confidence,
        }
        if f.age is not None:
            d["age"] = f.age
        if f.race is not None:
            d["race"] = f.race
        faces.append(d)
    return {
        "image_ref": ann.image_ref,
        "pet": {"klass": ann.pet.klass, "confidence": ann.pet.confidence},
        "faces": faces,
    }


def annotation_to_json(ann: ImageAnnotation) -> str:
    return json.dumps(annotation_to_dict(ann), separators=(",", ":"))


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
    elif hasattr(source, "read"):
        yield from source
    else:
        yield from source


def load_annotations(source, provenance: str = "file") -> AnnotationStore:
    """Read line-delimited annotation records into a validated store.

    Records that violate the schema (bad ranges, malformed bboxes, repeated
    image_ref) are rejected individually; diagnostics end up on the returned
    store's ``report``.
    """
    report = LoadReport()
    accepted: dict[str, ImageAnnotation] = {}
    for line_no, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        report.total += 1
        try:
            obj = json.loads(line)
        except ValueError as exc:
            report.rejected.append((line_no, f"bad JSON: {exc}"))
            continue
        try:
            ann = validate_annotation(obj)
        except ValueError as exc:
            report.rejected.append((line_no, str(exc)))
            continue
        if ann.image_ref in accepted:
            report.rejected.append((line_no, f"duplicate image_ref {ann.image_ref!r}"))
            continue
        accepted[ann.image_ref] = ann
        report.accepted += 1
    store = AnnotationStore(accepted.values(), provenance=provenance)
    store.report = report
    return store


def biggest_face(annotation: ImageAnnotation) -> FaceObservation | None:
    """The face with the largest bbox area, or None for a faceless image.

    Exact area ties go to the face with lexicographically smallest (x, y).
    Result does not depend on the order of the faces list.
    """
    if not annotation.faces:
        return None
    return min(annotation.faces, key=lambda f: (-f.area, f.x, f.y))


def is_selfie(annotation: ImageAnnotation, min_area_ratio: float = 0.10) -> bool:
    """True iff the image has exactly one face covering more than
    ``min_area_ratio`` of it (strict inequality, bbox area w*h)."""
    if len(annotation.faces) != 1:
        return False
    return annotation.faces[0].area > min_area_ratio


# -- remote annotator client -------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    """Bounded exponential backoff for the remote annotator."""

    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0
    backoff_max: float = 5.0

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        return min(self.backoff_base * self.backoff_factor ** (attempt - 1), self.backoff_max)


@dataclass
class FetchResult:
    """Partial-failure outcome of a remote fetch."""

    store: AnnotationStore
    failures: list[tuple[str, str]]  # (image_ref, reason)
    n_retries: int = 0

    def failure_manifest(self) -> dict:
        return {
            "n_failed": len(self.failures),
            "failures": [{"image_ref": r, "reason": why} for r, why in self.failures],
        }


def _chunks(seq: Sequence[str], size: int) -> Iterator[Sequence[str]]:
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


# Rate limiting (429) is retried like a transient server error; all other
# 4xx responses are treated as permanent.
_RETRYABLE_STATUS = {429}


def _post_batch(session, endpoint, batch, policy, timeout):
    """Returns (payload, retries_used, failure_reason); payload is None on failure."""
    retries = 0
    last_reason = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            resp = session.post(endpoint, json={"image_refs": list(batch)}, timeout=timeout)
        except requests.RequestException as exc:
            last_reason = f"network error: {exc}"
        else:
            if resp.status_code == 200:
                try:
                    return resp.json(), retries, None
                except ValueError as exc:
                    return None, retries, f"response is not JSON: {exc}"
            if resp.status_code in _RETRYABLE_STATUS or resp.status_code >= 500:
                last_reason = f"HTTP {resp.status_code}"
            else:
                return None, retries, f"HTTP {resp.status_code}"
        if attempt < policy.max_attempts:
            retries += 1
            logger.warning("annotator retry %d after %s", retries, last_reason)
            time.sleep(policy.delay(attempt))
    return None, retries, last_reason or "request failed"


def fetch_annotations(
    image_refs: Iterable[str],
    endpoint: str,
    retry_policy: RetryPolicy | None = None,
    batch_size: int = 100,
    timeout: float = 30.0,
    session=None,
) -> FetchResult:
    """Fetch annotations for ``image_refs`` from an HTTP annotator.

    Protocol: ``POST <endpoint>`` with ``{"image_refs": [...]}``; the
    response is a JSON list of annotation records validated exactly like
    file input. Transient failures (network, 5xx, 429) are retried with
    bounded exponential backoff; other 4xx are not. Batches that still fail,
    and refs the endpoint did not cover or answered invalidly, end up in the
    failure manifest rather than aborting the fetch.
    """
    policy = retry_policy or RetryPolicy()
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    refs = list(dict.fromkeys(image_refs))  # dedupe, keep order
    own_session = session is None
    sess = session or requests.Session()
    accepted: dict[str, ImageAnnotation] = {}
    failures: list[tuple[str, str]] = []
    total_retries = 0
    try:
        for batch in _chunks(refs, batch_size):
            payload, retries, reason = _post_batch(sess, endpoint, batch, policy, timeout)
            total_retries += retries
            if reason is not None:
                failures.extend((ref, reason) for ref in batch)
                continue
            if not isinstance(payload, list):
                failures.extend((ref, "response is not a list") for ref in batch)
                continue
            got: dict[str, ImageAnnotation] = {}
            bad: dict[str, str] = {}
            for obj in payload:
                try:
                    ann = validate_annotation(obj)
                except ValueError as exc:
                    ref = obj.get("image_ref") if isinstance(obj, dict) else None
                    if isinstance(ref, str):
                        bad[ref] = f"invalid annotation in response: {exc}"
                    continue
                got[ann.image_ref] = ann
            for ref in batch:
                if ref in got:
                    if ref not in accepted:
                        accepted[ref] = got[ref]
                elif ref in bad:
                    failures.append((ref, bad[ref]))
                else:
                    failures.append((ref, "missing from response"))
    finally:
        if own_session:
            sess.close()
    store = AnnotationStore(accepted.values(), provenance="remote")
    return FetchResult(store=store, failures=failures, n_retries=total_retries)
