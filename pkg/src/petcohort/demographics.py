"""Per-user gender inference from selfie annotations.

Each selfie contributes one vote (its single face's gender). Majority wins;
a tied vote falls back to comparing summed gender confidences, and an exact
tie there stays unknown. Unknowns are excluded from gendered cohorts and
reported, never guessed. Age and race are parsed and carried by the
annotation layer but take no part in the default reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .annotate import ImageAnnotation, is_selfie

__all__ = ["UserDemographics", "infer_gender"]


@dataclass(frozen=True)
class UserDemographics:
    """Aggregated gender verdict for one user.

    ``support`` counts the selfies that voted; ``agreement`` is the
    plurality fraction (1.0 for a unanimous vote, 0.0 when nothing voted).
    """

    user_id: str
    gender: str  # "male" | "female" | "unknown"
    support: int
    agreement: float

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "gender": self.gender,
            "support": self.support,
            "agreement": self.agreement,
        }


def infer_gender(
    selfie_annotations: Iterable[ImageAnnotation],
    user_id: str = "",
) -> UserDemographics:
    """Majority-vote gender over a user's selfies.

    Inputs must satisfy the selfie rule (exactly one face); anything else is
    a caller bug and raises ValueError. An empty input yields unknown with
    support 0.
    """
    votes = {"male": 0, "female": 0}
    conf = {"male": 0.0, "female": 0.0}
    support = 0
    for ann in selfie_annotations:
        if len(ann.faces) != 1:
            raise ValueError(
                f"infer_gender expects selfies (exactly one face), "
                f"got {len(ann.faces)} faces for {ann.image_ref!r}"
            )
        face = ann.faces[0]
        votes[face.gender] += 1
        conf[face.gender] += face.gender_confidence
        support += 1

    if support == 0:
        return UserDemographics(user_id=user_id, gender="unknown", support=0, agreement=0.0)

    if votes["male"] > votes["female"]:
        gender = "male"
    elif votes["female"] > votes["male"]:
        gender = "female"
    elif conf["male"] > conf["female"]:
        gender = "male"
    elif conf["female"] > conf["male"]:
        gender = "female"
    else:
        gender = "unknown"

    plurality = max(votes["male"], votes["female"])
    return UserDemographics(
        user_id=user_id,
        gender=gender,
        support=support,
        agreement=plurality / support,
    )
