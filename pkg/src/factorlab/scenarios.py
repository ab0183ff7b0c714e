"""Built-in problem instances and random instance generation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .observation import IncompleteMatrix, ObservationError, parse_matrix_text


def generate_random_instance(d: int, r: int, n: int, seed) -> IncompleteMatrix:
    """Rank-r ground truth X Y^T (Gaussian factors) observed at n uniform positions.

    Observed entries that happen to be exactly zero trigger a redraw.
    """
    if not (1 <= r < d):
        raise ObservationError(f"need 1 <= r < d, got r={r}, d={d}")
    if not (1 <= n <= d * d):
        raise ObservationError(f"need 1 <= n <= d^2, got n={n}")
    rng = np.random.default_rng(seed)
    while True:
        x = rng.standard_normal((d, r))
        y = rng.standard_normal((d, r))
        full = x @ y.T
        pos = rng.choice(d * d, size=n, replace=False)
        mask = np.zeros(d * d, dtype=bool)
        mask[pos] = True
        mask = mask.reshape(d, d)
        if np.all(full[mask] != 0):
            return IncompleteMatrix(full, mask)


def ground_truth(d: int, r: int, seed) -> np.ndarray:
    """The full matrix behind :func:`generate_random_instance` with the same seed."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d, r))
    y = rng.standard_normal((d, r))
    return x @ y.T


@dataclass
class Scenario:
    name: str
    text: str
    description: str
    train: dict = field(default_factory=dict)
    oracles: tuple = ("nuclear", "rank")
    expected: dict = field(default_factory=dict)

    def instance(self) -> IncompleteMatrix:
        return parse_matrix_text(self.text)


SCENARIOS = {}


def _add(s: Scenario):
    if s.name in SCENARIOS:
        raise ValueError(f"duplicate scenario {s.name}")
    SCENARIOS[s.name] = s


_add(Scenario(
    "M1", "1 2 *\n3 * *\n* * 5\n",
    "disconnected, not complete bipartite; rank-1 completion exists",
    expected={"rank_above_oracle": True, "critical_point_audit": True, "escape_alignment": 0.99}))
_add(Scenario(
    "M2", "1 2 *\n3 4 *\n* * 5\n",
    "disconnected with complete bipartite components",
    expected={"nuclear_norm": (np.sqrt(34) + 5, 1e-2), "nuclear_oracle_agreement": 1e-4,
              "critical_point_audit": True, "escape_alignment": 0.99}))
_add(Scenario(
    "M3", "1 2 *\n3 4 *\n6 * 5\n",
    "connected; minimum rank 2",
    oracles=("nuclear", "rank", "glrl"),
    expected={"final_rank": 2, "matches_min_rank": True, "himt_fraction": (0.99, 1e-2),
              "rank_steps_by_one": True, "critical_point_audit": True, "escape_alignment": 0.99}))
_add(Scenario(
    "fig4", "1 * 3\n* 5 *\n3 * 9\n",
    "two complete blocks: corners {1,3,3,9} and the centre 5",
    oracles=("nuclear", "rank", "glrl"),
    expected={"final_rank": 2,
              "first_plateau_entries": ({(0, 0): 1.0, (0, 2): 3.0, (2, 0): 3.0, (2, 2): 9.0}, 1e-2),
              "symmetric": ([((0, 1), (1, 0)), ((1, 2), (2, 1))], 1e-2),
              "glrl_completion": ([[1, 0, 3], [0, 5, 0], [3, 0, 9]], 1e-6),
              "nuclear_oracle_agreement": 1e-4,
              "critical_point_audit": True, "escape_alignment": 0.99}))
_add(Scenario(
    "coincident2x2", "2 *\n* 2\n",
    "tied top singular values at the origin",
    train={"init_variance": 1e-32, "record_stride": 1},
    expected={"plateau_ranks": (0, 2), "simultaneous_crossing": 0.05, "critical_point_audit": True}))
_add(Scenario(
    "staircase", "1 2 3 4\n2 1 4 3\n3 4 1 2\n6 7 8 *\n",
    "connected rank-3 4x4 with one missing entry (rank-3 value 9)",
    train={"init_variance": 1e-16},
    expected={"final_rank": 3, "plateau_ranks": (0, 1, 2, 3), "himt_fraction": (0.99, 1e-2),
              "rank_steps_by_one": True, "missing_entry_value": ((3, 3), 9.0, 1e-3),
              "critical_point_audit": True, "escape_alignment": 0.99}))
_add(Scenario(
    "M4", "1 2\n3 *\n",
    "2x2 with one gap; rank-1 value 6",
    expected={"sweep_toward": ((1, 1), 6.0, tuple(10.0 ** -k for k in range(1, 10))),
              "critical_point_audit": True, "escape_alignment": 0.99}))
_add(Scenario(
    "M5", "1 2\n20 *\n",
    "2x2 with one gap; rank-1 value 40 needs a very small initialization",
    expected={"sweep_toward": ((1, 1), 40.0, tuple(10.0 ** -k for k in range(1, 10))),
              "critical_point_audit": True, "escape_alignment": 0.99}))


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
