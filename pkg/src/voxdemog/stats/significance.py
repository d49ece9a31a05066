"""Test-result container, Bonferroni adjustment and significance tiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from voxdemog.errors import ContractError

# markers from the comparison tables: "§" not significant, then *, **, ***
DEFAULT_TIERS = ((0.0003, "***"), (0.003, "**"), (0.017, "*"))
NOT_SIGNIFICANT = "§"


def bonferroni(alpha: float, k: int) -> float:
    if k < 1:
        raise ContractError("number of comparisons must be >= 1")
    return alpha / k


def tier_thresholds(alpha: float = 0.05, k: int = 3) -> tuple[tuple[float, str], ...]:
    """Tier cut-offs for k comparisons.

    For the three-way comparison this returns the rounded table values
    (0.017, 0.003, 0.0003); otherwise alpha/k, alpha/(5k), alpha/(50k).
    """
    if alpha == 0.05 and k == 3:
        return DEFAULT_TIERS
    top = bonferroni(alpha, k)
    return ((top / 50.0, "***"), (top / 5.0, "**"), (top, "*"))


def tier(p: float, thresholds=DEFAULT_TIERS) -> str:
    for cut, mark in thresholds:
        if p < cut:
            return mark
    return NOT_SIGNIFICANT


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str
    n: int
    tier: str = NOT_SIGNIFICANT
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ContractError(f"p-value {self.p_value} outside [0, 1]")

    def with_tier(self, thresholds=DEFAULT_TIERS) -> "TestResult":
        self.tier = tier(self.p_value, thresholds)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["statistic"] = _finite_or_str(self.statistic)
        return d


def _finite_or_str(x: float):
    if x != x or x in (float("inf"), float("-inf")):
        return str(x)
    return x
