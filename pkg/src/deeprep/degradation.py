"""Seeded generators for the four missing-data scenarios.

* ``point``    -- entries missing uniformly at random, exact count.
* ``stripe``   -- whole lateral slices ``X[:, j, :]`` missing.
* ``deadline`` -- four consecutive band groups, each with 6-10 column
  intervals missing across all rows and the group's bands.
* ``mixed``    -- union of the three above (point 0.9, stripe 0.1, deadline).

All masks use ``True`` for observed entries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

CASES = ("point", "stripe", "deadline", "mixed")
# deadline rates per band group, in band order (on 80 bands, bands 1-20 get 0.2, ...)
DEFAULT_GROUP_RATES = (0.2, 0.1, 0.3, 0.4)
ASCENDING_GROUP_RATES = (0.1, 0.2, 0.3, 0.4)
DEADLINE_COUNTS = (6, 10)
MIXED_POINT_RATE = 0.9
MIXED_STRIPE_RATE = 0.1


def _check_rate(r: float) -> float:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"missing rate must lie in [0, 1], got {r}")
    return float(r)


def _dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    return dims


def gen_point_mask(dims, mr: float, seed: int) -> np.ndarray:
    """Exactly ``round(mr * n1 * n2 * n3)`` entries missing, drawn without replacement."""
    dims = _dims(dims)
    mr = _check_rate(mr)
    n = int(np.prod(dims))
    n_missing = int(round(mr * n))
    rng = np.random.default_rng(seed)
    mask = np.ones(n, dtype=bool)
    mask[rng.choice(n, size=n_missing, replace=False)] = False
    return mask.reshape(dims)


def gen_stripe_mask(dims, mr: float, seed: int) -> np.ndarray:
    """``floor(mr * n2)`` distinct lateral slices ``X[:, j, :]`` missing."""
    dims = _dims(dims)
    mr = _check_rate(mr)
    n2 = dims[1]
    count = int(np.floor(mr * n2 + 1e-9))
    rng = np.random.default_rng(seed)
    mask = np.ones(dims, dtype=bool)
    mask[:, rng.choice(n2, size=count, replace=False), :] = False
    return mask


def band_groups(n3: int, n_groups: int = 4) -> list[range]:
    """Consecutive band groups of size ``n3 // n_groups``; the last takes the remainder."""
    size = n3 // n_groups
    if size == 0:
        raise ValueError(f"cannot split {n3} bands into {n_groups} groups")
    starts = [g * size for g in range(n_groups)]
    return [range(s, starts[g + 1] if g + 1 < n_groups else n3) for g, s in enumerate(starts)]


def _composition(rng, total: int, parts: int, minimum: int) -> np.ndarray:
    """Random split of ``total`` into ``parts`` integers, each >= ``minimum``."""
    spare = total - parts * minimum
    cuts = np.sort(rng.choice(spare + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate(([-1], cuts, [spare + parts - 1]))
    return np.diff(edges) - 1 + minimum


def deadline_columns(n2: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Columns covered by one deadline pattern: 6-10 disjoint intervals of total width ``round(rate * n2)``."""
    total = int(round(_check_rate(rate) * n2))
    if total == 0:
        return np.zeros(0, dtype=int)
    d = int(rng.integers(DEADLINE_COUNTS[0], DEADLINE_COUNTS[1] + 1))
    # fewer deadlines when the total width cannot give each one column
    d = min(d, total)
    widths = _composition(rng, total, d, 1)
    free = n2 - total
    # keep intervals separated by at least one column when there is room
    sep = 1 if free >= d - 1 else 0
    gaps = _composition(rng, free - sep * (d - 1), d + 1, 0)
    gaps[1:d] += sep
    starts = np.cumsum(np.concatenate(([gaps[0]], widths[:-1] + gaps[1:d])))
    return np.concatenate([np.arange(a, a + w) for a, w in zip(starts, widths)])


def gen_deadline_mask(dims, group_rates=DEFAULT_GROUP_RATES, seed: int = 0) -> np.ndarray:
    """One deadline pattern per band group; its columns are missing in every row and band of the group."""
    dims = _dims(dims)
    group_rates = tuple(_check_rate(r) for r in group_rates)
    if len(group_rates) != 4:
        raise ValueError("deadline masks need exactly four group rates")
    rng = np.random.default_rng(seed)
    mask = np.ones(dims, dtype=bool)
    for bands, rate in zip(band_groups(dims[2]), group_rates):
        cols = deadline_columns(dims[1], rate, rng)
        mask[:, cols, bands.start : bands.stop] = False
    return mask


def gen_mixed_mask(dims, seed: int = 0, group_rates=DEFAULT_GROUP_RATES) -> np.ndarray:
    """Union of the missing sets of point (0.9), stripe (0.1) and deadline masks.

    The components use seeds ``seed``, ``seed + 1`` and ``seed + 2``.
    """
    return (
        gen_point_mask(dims, MIXED_POINT_RATE, seed)
        & gen_stripe_mask(dims, MIXED_STRIPE_RATE, seed + 1)
        & gen_deadline_mask(dims, group_rates, seed + 2)
    )


@dataclass
class DegradeSpec:
    case: str = "point"
    mr: float = 0.9
    group_rates: tuple = DEFAULT_GROUP_RATES
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}, got {self.case!r}")
        _check_rate(self.mr)
        self.group_rates = tuple(float(r) for r in self.group_rates)
        if len(self.group_rates) != 4:
            raise ValueError("deadline masks need exactly four group rates")
        for r in self.group_rates:
            _check_rate(r)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["group_rates"] = list(self.group_rates)
        return out


def generate_mask(dims, spec: DegradeSpec) -> np.ndarray:
    if spec.case == "point":
        return gen_point_mask(dims, spec.mr, spec.seed)
    if spec.case == "stripe":
        return gen_stripe_mask(dims, spec.mr, spec.seed)
    if spec.case == "deadline":
        return gen_deadline_mask(dims, spec.group_rates, spec.seed)
    return gen_mixed_mask(dims, spec.seed, spec.group_rates)


def degrade(x, mask) -> np.ndarray:
    """Observed tensor: ``x`` on observed entries, zero elsewhere."""
    return np.where(mask, x, 0.0)
