"""Post ingestion, study-window filtering, and per-user timeline assembly.

Input is a line-delimited stream of post records:

    {"post_id": str, "user_id": str, "timestamp": int, "image_ref": str,
     "caption": str?}

Timestamps are integer UTC seconds. Study windows are half-open
``[start, end)``: a post stamped exactly at ``end`` is outside the window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

from .errors import IngestError

__all__ = [
    "PostRecord",
    "StudyWindow",
    "UserTimeline",
    "IngestReport",
    "Corpus",
    "ingest_posts",
    "build_timelines",
    "filter_eligible_users",
]


@dataclass(frozen=True)
class PostRecord:
    """One social-media post: who posted which image when."""

    post_id: str
    user_id: str
    timestamp: int
    image_ref: str
    caption: str | None = None

    def to_dict(self) -> dict:
        d = {
            "post_id": self.post_id,
            "user_id": self.user_id,
            "timestamp": self.timestamp,
            "image_ref": self.image_ref,
        }
        if self.caption is not None:
            d["caption"] = self.caption
        return d


@dataclass(frozen=True)
class StudyWindow:
    """Half-open interval ``[start, end)`` of UTC epoch seconds."""

    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"window start must precede end, got [{self.start}, {self.end})")

    def contains(self, timestamp: int) -> bool:
        return self.start <= timestamp < self.end

    def span_seconds(self) -> int:
        return self.end - self.start

    @classmethod
    def unbounded(cls) -> "StudyWindow":
        """Window admitting every positive timestamp."""
        return cls(1, 2**62)

    @classmethod
    def parse(cls, text: str) -> "StudyWindow":
        """Parse ``<iso8601>/<iso8601>`` into a window.

        Each side accepts a date (``2015-06-01``) or a full timestamp;
        naive values and ``Z`` suffixes are taken as UTC.
        """
        parts = text.split("/")
        if len(parts) != 2:
            raise ValueError(f"window must be <iso8601>/<iso8601>, got {text!r}")
        return cls(_parse_iso(parts[0]), _parse_iso(parts[1]))


def _parse_iso(text: str) -> int:
    raw = text.strip().replace("Z", "+00:00")
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"bad ISO-8601 timestamp {text!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


@dataclass(frozen=True)
class UserTimeline:
    """One user's in-window posts, strictly ordered.

    Posts are sorted ascending by timestamp, ties broken by post_id, so a
    timeline is identical no matter the input order.
    """

    user_id: str
    posts: tuple[PostRecord, ...]
    window: StudyWindow

    def __len__(self) -> int:
        return len(self.posts)


@dataclass
class IngestReport:
    """What a single ingestion pass accepted and rejected."""

    total_lines: int = 0
    accepted: int = 0
    duplicates: list[tuple[int, str]] = field(default_factory=list)
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total_lines": self.total_lines,
            "accepted": self.accepted,
            "n_duplicates": len(self.duplicates),
            "n_malformed": len(self.malformed),
            "duplicates": [{"line": n, "post_id": p} for n, p in self.duplicates],
            "malformed": [{"line": n, "reason": r} for n, r in self.malformed],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class Corpus:
    """Validated posts plus the report of how they were ingested."""

    posts: list[PostRecord]
    report: IngestReport

    def __len__(self) -> int:
        return len(self.posts)

    def user_ids(self) -> list[str]:
        return sorted({p.user_id for p in self.posts})


def _validate_post(obj) -> PostRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    for key in ("post_id", "user_id", "image_ref"):
        value = obj.get(key)
        if not isinstance(value, str) or not value:
            raise ValueError(f"{key} must be a nonempty string")
    ts = obj.get("timestamp")
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise ValueError("timestamp must be an integer")
    if ts <= 0:
        raise ValueError(f"timestamp must be positive, got {ts}")
    caption = obj.get("caption")
    if caption is not None and not isinstance(caption, str):
        raise ValueError("caption must be a string when present")
    return PostRecord(
        post_id=obj["post_id"],
        user_id=obj["user_id"],
        timestamp=ts,
        image_ref=obj["image_ref"],
        caption=caption,
    )


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
    elif hasattr(source, "read"):
        yield from source
    else:
        yield from source


def ingest_posts(source, strict: bool = False) -> Corpus:
    """Read line-delimited post records into a validated corpus.

    ``source`` may be a path, an open text file, or any iterable of lines.
    Malformed lines are recorded with their line number; in strict mode the
    first one aborts with :class:`IngestError`. A repeated post_id is always
    rejected (the later occurrence loses) and counted as a duplicate.
    """
    report = IngestReport()
    posts: list[PostRecord] = []
    seen: set[str] = set()
    for line_no, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        report.total_lines += 1
        try:
            obj = json.loads(line)
            post = _validate_post(obj)
        except ValueError as exc:
            reason = str(exc)
            if strict:
                raise IngestError(line_no, reason) from None
            report.malformed.append((line_no, reason))
            continue
        if post.post_id in seen:
            report.duplicates.append((line_no, post.post_id))
            continue
        seen.add(post.post_id)
        posts.append(post)
        report.accepted += 1
    return Corpus(posts=posts, report=report)


def build_timelines(corpus: Corpus, window: StudyWindow) -> dict[str, UserTimeline]:
    """Group in-window posts into per-user timelines, keyed by user_id.

    Posts outside ``window`` are dropped; users left with no posts are
    omitted. The returned mapping is ordered by user_id and each timeline
    is sorted by (timestamp, post_id).
    """
    by_user: dict[str, list[PostRecord]] = {}
    for post in corpus.posts:
        if window.contains(post.timestamp):
            by_user.setdefault(post.user_id, []).append(post)
    timelines: dict[str, UserTimeline] = {}
    for user_id in sorted(by_user):
        posts = sorted(by_user[user_id], key=lambda p: (p.timestamp, p.post_id))
        timelines[user_id] = UserTimeline(user_id=user_id, posts=tuple(posts), window=window)
    return timelines


def filter_eligible_users(
    timelines: Mapping[str, UserTimeline],
    annotations,
    min_selfies: int = 3,
    min_area_ratio: float = 0.10,
) -> set[str]:
    """Users with at least ``min_selfies`` selfie posts in their timeline.

    Posts whose image has no annotation count as no-face and therefore as
    non-selfies.
    """
    from .annotate import is_selfie  # local import to avoid a cycle

    eligible: set[str] = set()
    for user_id, timeline in timelines.items():
        n = 0
        for post in timeline.posts:
            if is_selfie(annotations.lookup(post.image_ref), min_area_ratio):
                n += 1
                if n >= min_selfies:
                    break
        if n >= min_selfies:
            eligible.add(user_id)
    return eligible
