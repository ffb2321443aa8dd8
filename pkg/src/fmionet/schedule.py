"""Output snapshot schedule: 24 times from 1 day to 30 years.

Times through 323 days are exact day counts; later entries are year labels
converted at 365.0 days per year (so 1.3 y -> 474.5 d and 30 y -> 10950 d).
"""
from __future__ import annotations

from dataclasses import dataclass

YEAR_DAYS = 365.0

FULL_SCHEDULE_DAYS: tuple = (
    1.0, 2.0, 4.0, 7.0, 11.0, 17.0, 25.0, 37.0, 53.0, 77.0, 111.0, 158.0,
    226.0, 323.0,
    1.3 * YEAR_DAYS, 1.8 * YEAR_DAYS, 2.6 * YEAR_DAYS, 3.6 * YEAR_DAYS,
    5.2 * YEAR_DAYS, 7.3 * YEAR_DAYS, 10.4 * YEAR_DAYS, 14.8 * YEAR_DAYS,
    21.1 * YEAR_DAYS, 30.0 * YEAR_DAYS,
)

N_SNAPSHOTS = len(FULL_SCHEDULE_DAYS)

# Index subsets are 0-based positions in the 24-entry schedule. The named
# nonuniform cases pick six snapshots each; the uniform splits keep 50%, 33%
# or 25% of the snapshots starting from day 1 (the quarter split leaves the
# last three times, 14.8/21.1/30 years, entirely unseen).
NAMED_SUBSETS: dict = {
    "full": tuple(range(24)),
    "half": tuple(range(0, 24, 2)),
    "third": tuple(range(0, 24, 3)),
    "quarter": tuple(range(0, 24, 4)),
    "caseA": (0, 3, 8, 13, 18, 23),   # 1d, 7d, 53d, 323d, 5.2y, 30y
    "caseB": (0, 2, 8, 13, 18, 23),   # 1d, 4d, 53d, 323d, 5.2y, 30y
    "caseC": (0, 2, 7, 12, 18, 23),   # 1d, 4d, 37d, 226d, 5.2y, 30y
    "caseD": (0, 2, 7, 12, 17, 23),   # 1d, 4d, 37d, 226d, 3.6y, 30y
    "caseE": (0, 2, 7, 13, 18, 23),   # 1d, 4d, 37d, 323d, 5.2y, 30y
    "caseF": (0, 2, 7, 13, 19, 23),   # 1d, 4d, 37d, 323d, 7.3y, 30y
}


@dataclass(frozen=True)
class SnapshotSchedule:
    """Ordered output times (days) with their positions in the full schedule."""

    indices: tuple
    times_days: tuple

    def __len__(self) -> int:
        return len(self.indices)

    def __post_init__(self):
        times = self.times_days
        if not times:
            raise ValueError("schedule must contain at least one snapshot")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")


def snapshot_schedule(subset=None) -> SnapshotSchedule:
    """Build a schedule from the full 24 snapshots or a subset of them.

    ``subset`` may be None (all 24), a named preset ("half", "caseC", ...)
    or an iterable of 0-based indices into the full schedule.
    """
    if subset is None or subset == "full":
        idx = tuple(range(N_SNAPSHOTS))
    elif isinstance(subset, str):
        if subset not in NAMED_SUBSETS:
            raise ValueError(
                f"unknown schedule subset {subset!r}; choose from {sorted(NAMED_SUBSETS)}")
        idx = NAMED_SUBSETS[subset]
    else:
        idx = tuple(int(i) for i in subset)
        if not idx:
            raise ValueError("schedule subset is empty")
        if any(i < 0 or i >= N_SNAPSHOTS for i in idx):
            raise ValueError(f"subset indices must lie in [0, {N_SNAPSHOTS - 1}]")
        if len(set(idx)) != len(idx):
            raise ValueError("subset indices must be distinct")
        idx = tuple(sorted(idx))
    return SnapshotSchedule(indices=idx, times_days=tuple(FULL_SCHEDULE_DAYS[i] for i in idx))
