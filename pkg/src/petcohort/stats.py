"""Cohort statistics: user partition, normalized histograms, chi-square test.

Happiness values live on [0, 100] and are binned with a fixed width
(default 10): bins [0,10), [10,20), ..., [90,100] with the top bin closed.
Cohort distributions are compared with Pearson's chi-square test of
independence; the p-value is the chi-square survival function

    p = Q(df / 2, statistic / 2)

where Q is the regularized upper incomplete gamma function, implemented
here from scratch (series for small x, continued fraction otherwise) so the
tail is accurate far beyond any tabulated range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .demographics import UserDemographics
from .errors import DegenerateTableError
from .happiness import HappinessIndex
from .ownership import OwnershipVerdict

__all__ = [
    "CohortPartition",
    "HappinessHistogram",
    "ChiSquareResult",
    "regularized_gamma_p",
    "regularized_gamma_q",
    "chi_square_sf",
    "partition_users",
    "build_histogram",
    "chi_square_independence",
    "cohort_report",
    "P_DISPLAY_FLOOR",
]

# Reporting floor: smaller p-values display as "p < 0.0001", full precision
# is kept alongside.
P_DISPLAY_FLOOR = 1e-4

_GAMMA_EPS = 1e-16
_GAMMA_MAX_ITER = 10_000


def regularized_gamma_p(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x) for s > 0, x >= 0."""
    if s <= 0:
        raise ValueError(f"shape must be positive, got {s}")
    if x < 0:
        raise ValueError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if x < s + 1.0:
        return _gamma_p_series(s, x)
    return 1.0 - _gamma_q_contfrac(s, x)


def regularized_gamma_q(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) = 1 - P(s, x).

    The continued-fraction branch evaluates Q directly, so deep tails
    (Q ~ 1e-300) keep full relative precision instead of cancelling
    against 1.
    """
    if s <= 0:
        raise ValueError(f"shape must be positive, got {s}")
    if x < 0:
        raise ValueError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        return 1.0 - _gamma_p_series(s, x)
    return _gamma_q_contfrac(s, x)


def _gamma_p_series(s: float, x: float) -> float:
    # P(s,x) = x^s e^-x / Gamma(s) * sum_n x^n / (s (s+1) ... (s+n))
    ap = s
    total = 1.0 / s
    term = total
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    log_prefix = -x + s * math.log(x) - math.lgamma(s)
    return min(1.0, total * math.exp(log_prefix))


def _gamma_q_contfrac(s: float, x: float) -> float:
    # Q(s,x) = x^s e^-x / Gamma(s) * 1/(x+1-s- 1/(x+3-s- 4/(x+5-s- ...)))
    # evaluated with the modified Lentz algorithm.
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    log_prefix = -x + s * math.log(x) - math.lgamma(s)
    return min(1.0, h * math.exp(log_prefix))


def chi_square_sf(statistic: float, df: int) -> float:
    """Chi-square survival function: P(X >= statistic) with df degrees."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if statistic < 0:
        raise ValueError(f"statistic must be >= 0, got {statistic}")
    return regularized_gamma_q(df / 2.0, statistic / 2.0)


@dataclass(frozen=True)
class ChiSquareResult:
    """Pearson chi-square test outcome."""

    statistic: float
    df: int
    p_value: float
    dropped_bins: tuple[int, ...] = ()
    pooled_groups: tuple[tuple[int, ...], ...] | None = None

    def p_display(self) -> str:
        if self.p_value < P_DISPLAY_FLOOR:
            return f"p < {P_DISPLAY_FLOOR}"
        return f"{self.p_value:.6g}"

    def to_dict(self) -> dict:
        d = {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "p_display": self.p_display(),
            "dropped_bins": list(self.dropped_bins),
        }
        if self.pooled_groups is not None:
            d["pooled_groups"] = [list(g) for g in self.pooled_groups]
        return d


def chi_square_independence(
    table: Sequence[Sequence[float]],
    pool_min_expected: float | None = None,
) -> ChiSquareResult:
    """Pearson chi-square test of independence on an r x k count table.

    All-zero columns are dropped first (their indices are reported and the
    degrees of freedom shrink accordingly). With ``pool_min_expected`` set,
    adjacent retained columns are merged left to right until every expected
    cell reaches the threshold; by default no pooling and no continuity
    correction are applied.
    """
    observed = np.asarray(table, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[0] < 2:
        raise DegenerateTableError("table must have at least two rows")
    if (observed < 0).any():
        raise ValueError("counts must be nonnegative")

    col_totals = observed.sum(axis=0)
    dropped = tuple(int(j) for j in np.flatnonzero(col_totals == 0))
    keep = np.flatnonzero(col_totals > 0)
    observed = observed[:, keep]
    if observed.shape[1] < 2:
        raise DegenerateTableError(
            f"need at least 2 nonzero columns, have {observed.shape[1]}"
        )
    row_totals = observed.sum(axis=1)
    if (row_totals == 0).any():
        raise DegenerateTableError("every row needs at least one observation")

    pooled_groups = None
    if pool_min_expected is not None:
        observed, groups = _pool_columns(observed, row_totals, pool_min_expected)
        pooled_groups = tuple(tuple(int(keep[j]) for j in g) for g in groups)
        if observed.shape[1] < 2:
            raise DegenerateTableError("pooling left fewer than 2 columns")

    grand = observed.sum()
    expected = np.outer(row_totals, observed.sum(axis=0)) / grand
    statistic = float(((observed - expected) ** 2 / expected).sum())
    df = (observed.shape[0] - 1) * (observed.shape[1] - 1)
    return ChiSquareResult(
        statistic=statistic,
        df=df,
        p_value=chi_square_sf(statistic, df),
        dropped_bins=dropped,
        pooled_groups=pooled_groups,
    )


def _pool_columns(observed, row_totals, min_expected):
    """Merge adjacent columns until each expected cell >= min_expected."""
    grand = observed.sum()
    expected = np.outer(row_totals, observed.sum(axis=0)) / grand
    groups: list[list[int]] = []
    acc_obs = np.zeros(observed.shape[0])
    acc_exp = np.zeros(observed.shape[0])
    acc_idx: list[int] = []
    cols: list[np.ndarray] = []
    for j in range(observed.shape[1]):
        acc_obs = acc_obs + observed[:, j]
        acc_exp = acc_exp + expected[:, j]
        acc_idx.append(j)
        if (acc_exp >= min_expected).all():
            cols.append(acc_obs)
            groups.append(acc_idx)
            acc_obs = np.zeros(observed.shape[0])
            acc_exp = np.zeros(observed.shape[0])
            acc_idx = []
    if acc_idx:
        if cols:
            cols[-1] = cols[-1] + acc_obs
            groups[-1] = groups[-1] + acc_idx
        else:
            cols.append(acc_obs)
            groups.append(acc_idx)
    return np.column_stack(cols), groups


GENDER_KEYS = ("male", "female")
STATUS_KEYS = ("owner", "non_owner")


@dataclass
class CohortPartition:
    """2x2 gender-by-ownership user counts with margin totals."""

    counts: dict[str, dict[str, int]]
    excluded_unknown_gender: int = 0

    @classmethod
    def empty(cls) -> "CohortPartition":
        return cls(counts={g: {s: 0 for s in STATUS_KEYS} for g in GENDER_KEYS})

    def row_total(self, gender: str) -> int:
        return sum(self.counts[gender].values())

    def col_total(self, status: str) -> int:
        return sum(self.counts[g][status] for g in GENDER_KEYS)

    def grand_total(self) -> int:
        return sum(self.row_total(g) for g in GENDER_KEYS)

    def to_dict(self) -> dict:
        return {
            "counts": {g: dict(self.counts[g]) for g in GENDER_KEYS},
            "row_totals": {g: self.row_total(g) for g in GENDER_KEYS},
            "col_totals": {s: self.col_total(s) for s in STATUS_KEYS},
            "grand_total": self.grand_total(),
            "excluded_unknown_gender": self.excluded_unknown_gender,
        }


def partition_users(
    verdicts: Mapping[str, OwnershipVerdict],
    demographics: Mapping[str, UserDemographics],
) -> CohortPartition:
    """Cross-tabulate users by inferred gender and ownership status.

    Users whose gender is unknown (or who have no demographics record) are
    excluded from the table and counted separately.
    """
    partition = CohortPartition.empty()
    for user_id in verdicts:
        demo = demographics.get(user_id)
        gender = demo.gender if demo is not None else "unknown"
        if gender not in GENDER_KEYS:
            partition.excluded_unknown_gender += 1
            continue
        partition.counts[gender][verdicts[user_id].status] += 1
    return partition


@dataclass
class HappinessHistogram:
    """Fixed-width histogram of happiness values over [0, 100].

    ``proportions`` are counts normalized by the cohort size; with an empty
    cohort they are all zero and ``undefined_proportions`` is flagged.
    """

    bin_width: float
    edges: list[float]
    counts: list[int]
    proportions: list[float]
    total: int
    undefined_proportions: bool = False

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "edges": self.edges,
            "counts": self.counts,
            "proportions": self.proportions,
            "total": self.total,
            "undefined_proportions": self.undefined_proportions,
        }


def _n_bins(bin_width: float) -> int:
    if not 0 < bin_width <= 100:
        raise ValueError(f"bin_width must lie in (0, 100], got {bin_width}")
    n = 100.0 / bin_width
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"bin_width must divide 100 evenly, got {bin_width}")
    return int(round(n))


def build_histogram(values: Iterable[float], bin_width: float = 10.0) -> HappinessHistogram:
    """Bin happiness values into [0,10), ..., [90,100] (top bin closed).

    Values outside [0, 100] are rejected with a diagnostic.
    """
    n_bins = _n_bins(bin_width)
    counts = [0] * n_bins
    total = 0
    for v in values:
        if not 0 <= v <= 100:
            raise ValueError(f"happiness value out of range [0, 100]: {v}")
        idx = min(int(v / bin_width), n_bins - 1)
        counts[idx] += 1
        total += 1
    edges = [round(i * bin_width, 10) for i in range(n_bins + 1)]
    if total > 0:
        proportions = [c / total for c in counts]
        undefined = False
    else:
        proportions = [0.0] * n_bins
        undefined = True
    return HappinessHistogram(
        bin_width=bin_width,
        edges=edges,
        counts=counts,
        proportions=proportions,
        total=total,
        undefined_proportions=undefined,
    )


# Cohorts reported on, and the pairwise comparisons tested: owners against
# the control group overall, then within each gender.
COHORT_NAMES = (
    "owners",
    "non_owners",
    "male",
    "female",
    "male_owners",
    "male_non_owners",
    "female_owners",
    "female_non_owners",
)
COMPARISONS = (
    ("owners_vs_non_owners", "owners", "non_owners"),
    ("male_owners_vs_male_non_owners", "male_owners", "male_non_owners"),
    ("female_owners_vs_female_non_owners", "female_owners", "female_non_owners"),
)

# A cohort needs at least this many scored users before a test is attempted.
MIN_COHORT_FOR_TEST = 2


def cohort_report(
    partition: CohortPartition,
    hi: Mapping[str, HappinessIndex],
    verdicts: Mapping[str, OwnershipVerdict],
    demographics: Mapping[str, UserDemographics],
    bin_width: float = 10.0,
    pool_min_expected: float | None = None,
) -> dict:
    """Full cohort comparison: partition, histograms, chi-square tests.

    Histogram cohorts cover ownership alone, gender alone, and the four
    gender-by-ownership cells. Users without a happiness index are excluded
    from histograms and counted; users of unknown gender still appear in
    the ownership-only cohorts.
    """
    members: dict[str, list[float]] = {name: [] for name in COHORT_NAMES}
    undefined_hi = 0
    for user_id in sorted(verdicts):
        verdict = verdicts[user_id]
        index = hi.get(user_id)
        if index is None:
            undefined_hi += 1
            continue
        demo = demographics.get(user_id)
        gender = demo.gender if demo is not None else "unknown"
        status_cohort = "owners" if verdict.status == "owner" else "non_owners"
        members[status_cohort].append(index.value)
        if gender in GENDER_KEYS:
            members[gender].append(index.value)
            members[f"{gender}_{status_cohort}"].append(index.value)

    histograms = {
        name: build_histogram(values, bin_width) for name, values in members.items()
    }

    tests: dict[str, dict] = {}
    for test_name, name_a, name_b in COMPARISONS:
        size_a = histograms[name_a].total
        size_b = histograms[name_b].total
        if min(size_a, size_b) < MIN_COHORT_FOR_TEST:
            tests[test_name] = {
                "skipped": True,
                "reason": f"cohort too small ({name_a}={size_a}, {name_b}={size_b})",
            }
            continue
        table = [histograms[name_a].counts, histograms[name_b].counts]
        try:
            result = chi_square_independence(table, pool_min_expected=pool_min_expected)
        except DegenerateTableError as exc:
            tests[test_name] = {"skipped": True, "reason": str(exc)}
            continue
        tests[test_name] = {"skipped": False, **result.to_dict()}

    return {
        "partition": partition.to_dict(),
        "histograms": {name: histograms[name].to_dict() for name in COHORT_NAMES},
        "tests": tests,
        "exclusions": {
            "unknown_gender": partition.excluded_unknown_gender,
            "undefined_hi": undefined_hi,
        },
    }
