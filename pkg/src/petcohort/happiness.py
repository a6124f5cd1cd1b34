"""Per-user happiness index: mean smile confidence over face-bearing images.

Every image in the study window with at least one detected face contributes
exactly one smile score, taken from its biggest face (assumed closest to
the camera, hence most likely the account owner). The index for a window is
the plain arithmetic mean of those scores, so it always lies between the
smallest and largest contributing smile. A user with no face-bearing images
has no index; callers exclude such users and report them rather than
scoring them zero, which would read as extreme unhappiness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import AnnotationStore, biggest_face
from .corpus import StudyWindow, UserTimeline
from .errors import UndefinedHappinessError

__all__ = [
    "FaceImageSet",
    "HappinessIndex",
    "collect_face_images",
    "happiness_index",
    "happiness_series",
]


@dataclass(frozen=True)
class FaceImageSet:
    """Smile scores of a user's face-bearing posts within a window."""

    user_id: str
    window: StudyWindow
    entries: tuple[tuple[str, float], ...]  # (post_id, smile confidence)

    def __len__(self) -> int:
        return len(self.entries)

    def smiles(self) -> list[float]:
        return [s for _, s in self.entries]


@dataclass(frozen=True)
class HappinessIndex:
    """Mean smile confidence for one user over one window."""

    user_id: str
    window: StudyWindow
    value: float
    n_images: int

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "hi": self.value, "n_images": self.n_images}


def collect_face_images(timeline: UserTimeline, store: AnnotationStore) -> FaceImageSet:
    """One (post_id, smile) entry per post whose image has >= 1 face.

    The smile comes from the biggest face of each image; unannotated images
    count as faceless. Entries are deduplicated by post_id.
    """
    entries: list[tuple[str, float]] = []
    seen: set[str] = set()
    for post in timeline.posts:
        if post.post_id in seen:
            continue
        seen.add(post.post_id)
        face = biggest_face(store.lookup(post.image_ref))
        if face is not None:
            entries.append((post.post_id, face.smile_confidence))
    return FaceImageSet(user_id=timeline.user_id, window=timeline.window, entries=tuple(entries))


def happiness_index(face_set: FaceImageSet) -> HappinessIndex:
    """Arithmetic mean of the set's smile confidences.

    Raises :class:`UndefinedHappinessError` on an empty set; the caller is
    expected to exclude the user and count the exclusion.
    """
    if not face_set.entries:
        raise UndefinedHappinessError(
            f"user {face_set.user_id!r} has no face-bearing images in the window"
        )
    # np.mean uses pairwise summation: deterministic and accurate at scale.
    value = float(np.mean(np.asarray(face_set.smiles(), dtype=np.float64)))
    return HappinessIndex(
        user_id=face_set.user_id,
        window=face_set.window,
        value=value,
        n_images=len(face_set.entries),
    )


def happiness_series(
    timeline: UserTimeline,
    store: AnnotationStore,
    granularity_days: float,
) -> list[HappinessIndex]:
    """Happiness indices over consecutive sub-windows of the timeline window.

    The window splits into spans of ``granularity_days`` (the last one
    clipped); sub-windows with no face-bearing images are skipped.
    """
    if granularity_days <= 0:
        raise ValueError("granularity_days must be positive")
    step = int(round(granularity_days * 86400))
    if step <= 0:
        raise ValueError("granularity_days too small to form a sub-window")
    out: list[HappinessIndex] = []
    start = timeline.window.start
    while start < timeline.window.end:
        end = min(start + step, timeline.window.end)
        sub_window = StudyWindow(start, end)
        posts = tuple(p for p in timeline.posts if sub_window.contains(p.timestamp))
        sub_timeline = UserTimeline(user_id=timeline.user_id, posts=posts, window=sub_window)
        face_set = collect_face_images(sub_timeline, store)
        if face_set.entries:
            out.append(happiness_index(face_set))
        start = end
    return out
