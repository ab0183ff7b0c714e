"""Incomplete matrices, their bipartite observation graphs and sampling patterns."""
from __future__ import annotations

import enum
import itertools
import json
import re
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .linalg import LinalgError


class ObservationError(ValueError):
    """Invalid incomplete-matrix input."""


class IncompleteMatrix:
    """A d x d matrix with a binary observation mask.

    Unobserved values are stored as zero and never read by consumers.
    Observed values must be finite and nonzero unless ``allow_zero`` is set,
    in which case zeros only trigger a warning.
    """

    def __init__(self, values, mask, allow_zero: bool = False):
        v = np.array(values, dtype=float)
        p = np.array(mask, dtype=bool)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ObservationError(f"values must be square, got shape {v.shape}")
        if p.shape != v.shape:
            raise ObservationError(f"mask shape {p.shape} does not match values {v.shape}")
        obs = v[p]
        if not np.all(np.isfinite(obs)):
            raise ObservationError("observed entries must be finite")
        if np.any(obs == 0):
            msg = "observed entries must be nonzero"
            if not allow_zero:
                raise ObservationError(msg)
            warnings.warn(msg, stacklevel=2)
        v[~p] = 0.0
        v.setflags(write=False)
        p.setflags(write=False)
        self._values = v
        self._mask = p

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def d(self) -> int:
        return self._values.shape[0]

    @property
    def n(self) -> int:
        return int(self._mask.sum())

    @property
    def maskf(self) -> np.ndarray:
        return self._mask.astype(float)

    def observed(self):
        """List of ``(row, col, value)`` triples in row-major order."""
        rows, cols = np.nonzero(self._mask)
        return [(int(i), int(j), float(self._values[i, j])) for i, j in zip(rows, cols)]

    def consistent(self, w, tol: float = 1e-8) -> bool:
        """True if ``w`` reproduces every observed entry within ``tol``."""
        w = np.asarray(w, dtype=float)
        return bool(np.all(np.abs(w - self._values)[self._mask] <= tol))

    def to_text(self) -> str:
        lines = []
        for i in range(self.d):
            toks = [repr(float(self._values[i, j])) if self._mask[i, j] else "*"
                    for j in range(self.d)]
            lines.append(", ".join(toks))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"d": self.d, "entries": [list(t) for t in self.observed()]}

    @classmethod
    def from_entries(cls, d: int, entries, allow_zero: bool = False) -> "IncompleteMatrix":
        vals = np.zeros((d, d))
        mask = np.zeros((d, d), dtype=bool)
        for row, col, value in entries:
            i, j = int(row), int(col)
            if not (0 <= i < d and 0 <= j < d):
                raise ObservationError(f"entry ({i}, {j}) outside a {d}x{d} matrix")
            if mask[i, j]:
                raise ObservationError(f"entry ({i}, {j}) given twice")
            vals[i, j] = float(value)
            mask[i, j] = True
        return cls(vals, mask, allow_zero=allow_zero)

    def __repr__(self):
        return f"IncompleteMatrix(d={self.d}, n={self.n})"


_SPLIT = re.compile(r"[,\s]+")


def parse_matrix_text(text: str, allow_zero: bool = False) -> IncompleteMatrix:
    """Parse the row-per-line text format (``*`` marks a missing entry)."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = [t for t in _SPLIT.split(line) if t]
        row = []
        for tok in toks:
            if tok == "*":
                row.append(None)
                continue
            try:
                row.append(float(tok))
            except ValueError:
                raise ObservationError(f"line {lineno}: cannot parse {tok!r}") from None
        rows.append(row)
    if not rows:
        raise ObservationError("no matrix rows found")
    d = len(rows)
    for k, row in enumerate(rows):
        if len(row) != d:
            raise ObservationError(f"row {k} has {len(row)} entries, expected {d} (square)")
    vals = np.array([[0.0 if x is None else x for x in r] for r in rows])
    mask = np.array([[x is not None for x in r] for r in rows])
    return IncompleteMatrix(vals, mask, allow_zero=allow_zero)


def parse_matrix_json(obj, allow_zero: bool = False) -> IncompleteMatrix:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        d = int(obj["d"])
        entries = obj["entries"]
    except (KeyError, TypeError) as exc:
        raise ObservationError(f"JSON matrix needs 'd' and 'entries': {exc}") from None
    if d < 1:
        raise ObservationError("d must be positive")
    return IncompleteMatrix.from_entries(d, entries, allow_zero=allow_zero)


def load_matrix(path, allow_zero: bool = False) -> IncompleteMatrix:
    """Read a matrix file; JSON is detected by a leading ``{``."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ObservationError(f"invalid JSON: {exc}") from None
        return parse_matrix_json(obj, allow_zero=allow_zero)
    return parse_matrix_text(text, allow_zero=allow_zero)


# ----------------------------------------------------------------------------
# graph structure


@dataclass(frozen=True)
class ObservationGraph:
    """Bipartite graph of observed positions; untouched rows/cols are dropped."""

    d: int
    row_vertices: tuple
    col_vertices: tuple
    edges: tuple

    @property
    def is_complete_bipartite(self) -> bool:
        return len(self.edges) == len(self.row_vertices) * len(self.col_vertices)


@dataclass(frozen=True)
class Component:
    rows: tuple
    cols: tuple
    edges: tuple

    @property
    def is_complete(self) -> bool:
        return len(self.edges) == len(self.rows) * len(self.cols)


@dataclass(frozen=True)
class ComponentDecomposition:
    components: tuple

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, k):
        return self.components[k]


class ConnectivityClass(str, enum.Enum):
    CONNECTED = "Connected"
    DISCONNECTED = "Disconnected"
    DISCONNECTED_COMPLETE_BIPARTITE = "DisconnectedCompleteBipartite"

    @property
    def is_disconnected(self) -> bool:
        return self is not ConnectivityClass.CONNECTED


def _mask_of(m) -> np.ndarray:
    if isinstance(m, IncompleteMatrix):
        return m.mask
    p = np.asarray(m)
    if p.ndim != 2:
        raise ObservationError("mask must be 2-D")
    return p.astype(bool)


def build_observation_graph(m) -> ObservationGraph:
    p = _mask_of(m)
    rows, cols = np.nonzero(p)
    edges = tuple((int(i), int(j)) for i, j in zip(rows, cols))
    return ObservationGraph(
        d=p.shape[0],
        row_vertices=tuple(sorted(set(int(i) for i in rows))),
        col_vertices=tuple(sorted(set(int(j) for j in cols))),
        edges=edges,
    )


def connected_components(g: ObservationGraph) -> ComponentDecomposition:
    """Components of the bipartite graph, ordered by smallest row index."""
    if not g.edges:
        return ComponentDecomposition(())
    d = g.d
    e = np.array(g.edges)
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], d + e[:, 1])), shape=(2 * d, 2 * d))
    _, labels = _cc(adj, directed=False)
    groups: dict = {}
    for i, j in g.edges:
        groups.setdefault(int(labels[i]), []).append((i, j))
    comps = []
    for edges in groups.values():
        rows = tuple(sorted({i for i, _ in edges}))
        cols = tuple(sorted({j for _, j in edges}))
        comps.append(Component(rows, cols, tuple(sorted(edges))))
    comps.sort(key=lambda c: (c.rows[0], c.cols[0]))
    return ComponentDecomposition(tuple(comps))


def components_of(m) -> ComponentDecomposition:
    return connected_components(build_observation_graph(m))


def classify_connectivity(m) -> ConnectivityClass:
    p = _mask_of(m)
    if not p.any():
        raise ObservationError("connectivity is undefined without observations")
    comps = components_of(p)
    if len(comps) == 1:
        return ConnectivityClass.CONNECTED
    if all(c.is_complete for c in comps):
        return ConnectivityClass.DISCONNECTED_COMPLETE_BIPARTITE
    return ConnectivityClass.DISCONNECTED


def entry_graph_connected(m) -> bool:
    """Connectivity of the graph on observed entries (adjacent = same row or column)."""
    p = _mask_of(m)
    rows, cols = np.nonzero(p)
    k = len(rows)
    if k == 0:
        raise ObservationError("no observations")
    adj = (rows[:, None] == rows[None, :]) | (cols[:, None] == cols[None, :])
    ncomp, _ = _cc(adj.astype(np.int8), directed=False)
    return ncomp == 1


# ----------------------------------------------------------------------------
# sampling-pattern equivalence

MAX_ENUM_D = 4


@lru_cache(maxsize=None)
def _perm_table(d: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(d))), dtype=np.intp)


def _pattern_keys(mask: np.ndarray) -> np.ndarray:
    """Integer keys of every image of ``mask`` under row/col permutation and transpose.

    The key reads the row-major flattening as a binary number, so the
    smallest key is the lexicographic minimum.
    """
    d = mask.shape[0]
    perms = _perm_table(d)
    weights = (1 << np.arange(d * d - 1, -1, -1, dtype=np.int64))
    keys = []
    for base in (mask, mask.T):
        rp = base[perms]                      # (P, d, d)
        imgs = rp[:, :, perms]                # (P, d, P, d)
        imgs = imgs.transpose(0, 2, 1, 3).reshape(-1, d * d)
        keys.append(imgs.astype(np.int64) @ weights)
    return np.concatenate(keys)


def _key_to_mask(key: int, d: int) -> np.ndarray:
    bits = [(key >> (d * d - 1 - k)) & 1 for k in range(d * d)]
    return np.array(bits, dtype=np.int8).reshape(d, d)


def canonical_pattern(mask) -> np.ndarray:
    """Lexicographically smallest mask in the orbit under row/col permutations and transpose."""
    p = np.asarray(mask).astype(bool)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ObservationError("canonical_pattern needs a square mask")
    d = p.shape[0]
    if d > MAX_ENUM_D:
        raise ObservationError(
            f"brute-force canonicalization is limited to d <= {MAX_ENUM_D}; got d={d}")
    key = int(_pattern_keys(p).min())
    return _key_to_mask(key, d)


def enumerate_pattern_classes(d: int, n: int) -> list:
    """One canonical representative per equivalence class of d x d masks with n entries."""
    if d > MAX_ENUM_D:
        raise ObservationError(
            f"enumeration is limited to d <= {MAX_ENUM_D} (got {d}); the orbit search is brute force")
    if d < 1 or not (1 <= n <= d * d):
        raise ObservationError(f"need 1 <= n <= d^2, got d={d}, n={n}")
    seen = set()
    flat = np.zeros(d * d, dtype=bool)
    for combo in itertools.combinations(range(d * d), n):
        flat[:] = False
        flat[list(combo)] = True
        seen.add(int(_pattern_keys(flat.reshape(d, d)).min()))
    return [_key_to_mask(k, d) for k in sorted(seen)]


def pattern_census(d: int) -> list:
    """Number of equivalence classes for n = 1 .. d^2."""
    return [len(enumerate_pattern_classes(d, n)) for n in range(1, d * d + 1)]


__all__ = [
    "IncompleteMatrix", "ObservationError", "parse_matrix_text", "parse_matrix_json",
    "load_matrix", "ObservationGraph", "Component", "ComponentDecomposition",
    "ConnectivityClass", "build_observation_graph", "connected_components",
    "components_of", "classify_connectivity", "entry_graph_connected",
    "canonical_pattern", "enumerate_pattern_classes", "pattern_census", "LinalgError",
]
