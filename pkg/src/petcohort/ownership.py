"""Pet-owner classification from pet-labeled posts and timeline structure.

A user owns a pet of type T if two posts labeled T are separated by more
than ``min_gap_days`` (default one week). Any number of pet posts confined
to a single short burst, or single posts of different pet types, leave the
user in the control group: that posting pattern is a pet lover visiting
someone else's pet, not an owner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .annotate import AnnotationStore
from .corpus import UserTimeline

__all__ = [
    "SECONDS_PER_DAY",
    "PetPost",
    "OwnershipVerdict",
    "extract_pet_posts",
    "classify_owner",
]

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class PetPost:
    """A post whose image is confidently labeled cat or dog."""

    post_id: str
    timestamp: int
    klass: str  # "cat" or "dog", never "other"
    confidence: float


@dataclass(frozen=True)
class OwnershipVerdict:
    """Owner / control-group decision for one user.

    ``evidence`` lists the supporting post_ids (all pet posts of the chosen
    type for owners, all pet posts otherwise). ``max_span_days`` is the
    widest same-type timestamp spread seen, 0.0 when no type has two posts.
    """

    user_id: str
    status: str  # "owner" | "non_owner"
    pet_type: str | None
    evidence: tuple[str, ...]
    max_span_days: float

    def __post_init__(self):
        if self.status == "owner":
            if self.pet_type is None or len(self.evidence) < 2:
                raise ValueError("owner verdict requires a pet_type and >= 2 evidence posts")
        elif self.status == "non_owner":
            if self.pet_type is not None:
                raise ValueError("non_owner verdict must not carry a pet_type")
        else:
            raise ValueError(f"unknown status {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "status": self.status,
            "pet_type": self.pet_type,
            "evidence": list(self.evidence),
            "max_span_days": self.max_span_days,
        }


def extract_pet_posts(
    timeline: UserTimeline,
    store: AnnotationStore,
    pet_conf_threshold: float = 0.5,
) -> list[PetPost]:
    """Timeline posts labeled cat or dog at confidence >= threshold,
    in timeline order. Unannotated images count as non-pet."""
    out: list[PetPost] = []
    for post in timeline.posts:
        ann = store.lookup(post.image_ref)
        if ann.pet.klass in ("cat", "dog") and ann.pet.confidence >= pet_conf_threshold:
            out.append(PetPost(post.post_id, post.timestamp, ann.pet.klass, ann.pet.confidence))
    return out


def classify_owner(
    pet_posts: Sequence[PetPost],
    min_gap_days: float = 7.0,
    user_id: str = "",
) -> OwnershipVerdict:
    """Decide owner vs. control group from a user's pet posts.

    A pet type qualifies when some pair of its posts is more than
    ``min_gap_days`` apart (strictly; the pair need not be consecutive).
    When both cat and dog qualify the verdict goes to the type with more
    posts, ties to the type whose first post is earlier, then to "cat" for
    determinism. No qualifying type means non_owner regardless of how many
    pet posts exist.
    """
    by_type: dict[str, list[PetPost]] = {}
    for p in pet_posts:
        if p.klass not in ("cat", "dog"):
            raise ValueError(f"pet post klass must be cat or dog, got {p.klass!r}")
        by_type.setdefault(p.klass, []).append(p)

    gap_threshold = min_gap_days * SECONDS_PER_DAY
    max_span_days = 0.0
    qualifying: list[tuple[int, int, str]] = []  # (-count, first_ts, klass)
    for klass, posts in by_type.items():
        times = sorted(p.timestamp for p in posts)
        if len(times) < 2:
            continue
        span = times[-1] - times[0]  # widest pairwise gap within the type
        max_span_days = max(max_span_days, span / SECONDS_PER_DAY)
        if span > gap_threshold:
            qualifying.append((-len(posts), times[0], klass))

    if not qualifying:
        return OwnershipVerdict(
            user_id=user_id,
            status="non_owner",
            pet_type=None,
            evidence=tuple(p.post_id for p in pet_posts),
            max_span_days=max_span_days,
        )

    qualifying.sort()
    pet_type = qualifying[0][2]
    chosen = sorted(by_type[pet_type], key=lambda p: (p.timestamp, p.post_id))
    span = chosen[-1].timestamp - chosen[0].timestamp
    return OwnershipVerdict(
        user_id=user_id,
        status="owner",
        pet_type=pet_type,
        evidence=tuple(p.post_id for p in chosen),
        max_span_days=span / SECONDS_PER_DAY,
    )
