"""Spell sequences and optimal-matching-of-spells dissimilarity.

A session maps to its spell form: maximal runs of one app category, each
carrying the summed event duration (internal gaps excluded). The distance
between two spell sequences is the minimum total cost over edit scripts,
where aligning spell (x, dx) with (y, dy) costs S(x, y) + e*|dx - dy|, and
inserting or deleting spell (x, d) costs indel + e*(d - 1). Durations enter
the cost in configurable units (default: minutes).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .categories import DEFAULT_CATALOG, CategoryCatalog
from .errors import DataValidationError
from .sessions import Session

try:
    import numba
    from numba import njit, prange

    # The default TBB layer is unavailable on this toolchain; workqueue is
    # always present and plenty for the pairwise fill.
    numba.config.THREADING_LAYER = "workqueue"
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

MIN_SPELL_DURATION_S = 1.0


@dataclass(frozen=True)
class SpellSequence:
    """Alternating (state, duration-in-seconds) runs; adjacent states differ."""

    spells: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for (a, da), (b, _) in zip(self.spells, self.spells[1:]):
            if a == b:
                raise DataValidationError("adjacent spells must have distinct states")
        for _, d in self.spells:
            if d <= 0:
                raise DataValidationError("spell durations must be positive")

    def __len__(self) -> int:
        return len(self.spells)

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.spells)

    @property
    def durations(self) -> tuple[float, ...]:
        return tuple(d for _, d in self.spells)

    @property
    def total_duration_s(self) -> float:
        return sum(self.durations)


@dataclass(frozen=True)
class CostModel:
    """Edit costs: constant or matrix substitution, scalar indel, duration rate.

    ``substitution`` is either a single nonnegative scalar applied to every
    distinct state pair or a full symmetric zero-diagonal matrix indexed by
    catalog order. ``expansion`` prices each unit of duration mismatch;
    ``duration_unit`` converts spell seconds into those units.
    """

    substitution: float | np.ndarray = 2.0
    indel: float = 1.0
    expansion: float = 0.5
    duration_unit: float = 60.0
    catalog: CategoryCatalog = field(default=DEFAULT_CATALOG)

    def __post_init__(self):
        if self.indel < 0 or self.expansion < 0 or self.duration_unit <= 0:
            raise DataValidationError("cost parameters must be nonnegative (unit positive)")
        if isinstance(self.substitution, np.ndarray):
            s = self.substitution
            n = len(self.catalog)
            if s.shape != (n, n):
                raise DataValidationError(f"substitution matrix must be {n}x{n}")
            if not np.allclose(s, s.T):
                raise DataValidationError("substitution matrix must be symmetric")
            if np.any(np.diag(s) != 0):
                raise DataValidationError("substitution matrix must have zero diagonal")
            if np.any(s < 0):
                raise DataValidationError("substitution costs must be nonnegative")
        elif self.substitution < 0:
            raise DataValidationError("substitution cost must be nonnegative")

    def sub_cost(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        if isinstance(self.substitution, np.ndarray):
            return float(self.substitution[self.catalog.index(a), self.catalog.index(b)])
        return float(self.substitution)


@dataclass
class DissimilarityMatrix:
    """Symmetric pairwise distances with optional deduplication weights.

    ``index_map[i]`` gives the matrix row for original sequence i; ``weights``
    holds per-row multiplicities (all ones when dedup is off).
    """

    entries: np.ndarray
    weights: np.ndarray
    index_map: list[int]
    sequences: list[SpellSequence]

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])


def to_spell_sequence(session: Session) -> SpellSequence:
    """Merge consecutive same-category events into spells.

    Spell duration sums event durations only (internal idle time excluded).
    Durations are floored at one second to keep every spell positive, which
    also realizes the all-zero-duration session rule.
    """
    if session.n_events == 0:
        raise DataValidationError("cannot build a spell sequence from an empty session")
    spells: list[tuple[str, float]] = []
    for ev in session.events:
        if spells and spells[-1][0] == ev.category:
            spells[-1] = (ev.category, spells[-1][1] + ev.duration_s)
        else:
            spells.append((ev.category, ev.duration_s))
    return SpellSequence(tuple((s, max(d, MIN_SPELL_DURATION_S)) for s, d in spells))


def omspell_distance(a: SpellSequence, b: SpellSequence, cost: CostModel) -> float:
    """Dynamic-programming minimum edit cost between two spell sequences.

    Costed durations are floored at one duration unit: spells shorter than a
    unit are indistinguishable from a unit-length spell, which keeps every
    e-term nonnegative (an indel of d < 1 would otherwise get cheaper as the
    expansion rate grows).
    """
    da = [max(d / cost.duration_unit, 1.0) for d in a.durations]
    db = [max(d / cost.duration_unit, 1.0) for d in b.durations]
    n, m = len(da), len(db)
    e = cost.expansion
    indel = cost.indel

    prev = [0.0] * (m + 1)
    for j in range(1, m + 1):
        prev[j] = prev[j - 1] + indel + e * (db[j - 1] - 1.0)
    for i in range(1, n + 1):
        cur = [prev[0] + indel + e * (da[i - 1] - 1.0)] + [0.0] * m
        for j in range(1, m + 1):
            align = prev[j - 1] + cost.sub_cost(a.states[i - 1], b.states[j - 1]) + e * abs(
                da[i - 1] - db[j - 1]
            )
            delete = prev[j] + indel + e * (da[i - 1] - 1.0)
            insert = cur[j - 1] + indel + e * (db[j - 1] - 1.0)
            cur[j] = min(align, delete, insert)
        prev = cur
    return prev[m]


if _HAVE_NUMBA:

    @njit(cache=True)
    def _omspell_kernel(states_a, dur_a, len_a, states_b, dur_b, len_b, sub, indel, e):
        n = len_a
        m = len_b
        prev = np.empty(m + 1)
        cur = np.empty(m + 1)
        prev[0] = 0.0
        for j in range(1, m + 1):
            prev[j] = prev[j - 1] + indel + e * (dur_b[j - 1] - 1.0)
        for i in range(1, n + 1):
            cur[0] = prev[0] + indel + e * (dur_a[i - 1] - 1.0)
            for j in range(1, m + 1):
                align = prev[j - 1] + sub[states_a[i - 1], states_b[j - 1]] + e * abs(
                    dur_a[i - 1] - dur_b[j - 1]
                )
                delete = prev[j] + indel + e * (dur_a[i - 1] - 1.0)
                insert = cur[j - 1] + indel + e * (dur_b[j - 1] - 1.0)
                best = align
                if delete < best:
                    best = delete
                if insert < best:
                    best = insert
                cur[j] = best
            for j in range(m + 1):
                prev[j] = cur[j]
        return prev[m]

    @njit(parallel=True, cache=True)
    def _matrix_kernel(states, durs, lengths, sub, indel, e):
        n = states.shape[0]
        out = np.zeros((n, n))
        for i in prange(n):
            for j in range(i + 1, n):
                d = _omspell_kernel(
                    states[i], durs[i], lengths[i], states[j], durs[j], lengths[j], sub, indel, e
                )
                out[i, j] = d
                out[j, i] = d
        return out


def _pack_sequences(sequences, cost):
    """Encode sequences as fixed-width int/float arrays for the numba kernel."""
    n = len(sequences)
    max_len = max((len(s) for s in sequences), default=0)
    states = np.zeros((n, max(max_len, 1)), dtype=np.int64)
    durs = np.zeros((n, max(max_len, 1)), dtype=np.float64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, seq in enumerate(sequences):
        lengths[i] = len(seq)
        for k, (s, d) in enumerate(seq.spells):
            states[i, k] = cost.catalog.index(s)
            durs[i, k] = max(d / cost.duration_unit, 1.0)
    return states, durs, lengths


def _substitution_matrix(cost: CostModel) -> np.ndarray:
    if isinstance(cost.substitution, np.ndarray):
        return cost.substitution.astype(np.float64)
    n = len(cost.catalog)
    sub = np.full((n, n), float(cost.substitution))
    np.fill_diagonal(sub, 0.0)
    return sub


def distance_matrix(
    sequences: list[SpellSequence],
    cost: CostModel,
    dedup: bool = True,
    weights: list[float] | None = None,
    normalize: str = "none",
) -> DissimilarityMatrix:
    """Pairwise OMspell distances, optionally collapsing identical sequences.

    With ``dedup`` the matrix rows are unique sequences weighted by
    multiplicity (or by the summed input weights), which tames the O(n^2)
    fill for users with many repeated sessions. ``normalize='max'`` divides
    all entries by the largest distance.
    """
    if not sequences:
        raise DataValidationError("distance_matrix requires at least one sequence")
    if normalize not in ("none", "max"):
        raise DataValidationError(f"unknown normalize mode {normalize!r}")
    in_weights = [1.0] * len(sequences) if weights is None else [float(w) for w in weights]
    if len(in_weights) != len(sequences):
        raise DataValidationError("weights length must match sequences")

    if dedup:
        keyed: dict[tuple, int] = {}
        uniq: list[SpellSequence] = []
        w: list[float] = []
        index_map: list[int] = []
        for seq, wt in zip(sequences, in_weights):
            key = seq.spells
            if key in keyed:
                row = keyed[key]
                w[row] += wt
            else:
                row = len(uniq)
                keyed[key] = row
                uniq.append(seq)
                w.append(wt)
            index_map.append(row)
    else:
        uniq = list(sequences)
        w = in_weights
        index_map = list(range(len(sequences)))

    n = len(uniq)
    if _HAVE_NUMBA and n >= 2:
        states, durs, lengths = _pack_sequences(uniq, cost)
        entries = _matrix_kernel(
            states, durs, lengths, _substitution_matrix(cost), float(cost.indel), float(cost.expansion)
        )
    else:
        entries = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d = omspell_distance(uniq[i], uniq[j], cost)
                entries[i, j] = d
                entries[j, i] = d

    if normalize == "max":
        peak = entries.max()
        if peak > 0:
            entries = entries / peak

    return DissimilarityMatrix(
        entries=entries,
        weights=np.asarray(w, dtype=np.float64),
        index_map=index_map,
        sequences=uniq,
    )


CSV_EXPORT_LIMIT = 2000


def serialize_sequence(seq: SpellSequence) -> str:
    return "|".join(f"{s}:{d:g}" for s, d in seq.spells)


def parse_sequence(text: str, catalog: CategoryCatalog = DEFAULT_CATALOG) -> SpellSequence:
    spells = []
    for part in text.split("|"):
        state, _, dur = part.rpartition(":")
        if not state:
            raise DataValidationError(f"malformed spell {part!r}")
        catalog.validate(state)
        spells.append((state, float(dur)))
    return SpellSequence(tuple(spells))


def write_matrix(matrix: DissimilarityMatrix, path: str | Path) -> list[Path]:
    """Export a matrix: CSV up to n=2000, else packed binary plus JSON sidecar.

    Binary layout: little-endian float64, row-major upper triangle excluding
    the diagonal.
    """
    path = Path(path)
    sidecar = {
        "n": matrix.n,
        "weights": [float(x) for x in matrix.weights],
        "index_map": list(matrix.index_map),
        "sequences": [serialize_sequence(s) for s in matrix.sequences],
    }
    if matrix.n <= CSV_EXPORT_LIMIT:
        csv_path = path.with_suffix(".csv")
        with open(csv_path, "w") as fh:
            for i in range(matrix.n):
                fh.write(",".join(repr(float(x)) for x in matrix.entries[i]) + "\n")
        side_path = path.with_suffix(".json")
        side_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1))
        return [csv_path, side_path]
    bin_path = path.with_suffix(".bin")
    upper = matrix.entries[np.triu_indices(matrix.n, k=1)]
    with open(bin_path, "wb") as fh:
        fh.write(struct.pack(f"<{upper.size}d", *upper))
    side_path = path.with_suffix(".json")
    side_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    return [bin_path, side_path]


def read_matrix(path: str | Path, catalog: CategoryCatalog = DEFAULT_CATALOG) -> DissimilarityMatrix:
    path = Path(path)
    side_path = path.with_suffix(".json")
    if not side_path.exists():
        raise DataValidationError(f"matrix sidecar not found: {side_path}")
    sidecar = json.loads(side_path.read_text())
    n = int(sidecar["n"])
    csv_path = path.with_suffix(".csv")
    bin_path = path.with_suffix(".bin")
    if csv_path.exists():
        entries = np.loadtxt(csv_path, delimiter=",", ndmin=2)
        if entries.shape != (n, n):
            raise DataValidationError(f"matrix file {csv_path} has shape {entries.shape}, expected ({n}, {n})")
    elif bin_path.exists():
        raw = bin_path.read_bytes()
        expected = n * (n - 1) // 2
        if len(raw) != expected * 8:
            raise DataValidationError(f"matrix file {bin_path} is corrupt: {len(raw)} bytes, expected {expected * 8}")
        upper = np.array(struct.unpack(f"<{expected}d", raw))
        entries = np.zeros((n, n))
        entries[np.triu_indices(n, k=1)] = upper
        entries = entries + entries.T
    else:
        raise DataValidationError(f"no matrix payload found for {path}")
    return DissimilarityMatrix(
        entries=entries,
        weights=np.asarray(sidecar["weights"], dtype=np.float64),
        index_map=[int(i) for i in sidecar["index_map"]],
        sequences=[parse_sequence(t, catalog) for t in sidecar["sequences"]],
    )
