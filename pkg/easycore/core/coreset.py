"""EasyCore — AIGN ledger, hardness ordering and coreset selection.

A sample's AIGN is the mean over recorded epochs of the Euclidean norm of the
loss gradient with respect to that sample's input. Low AIGN = easy. Selection
functions are pure over immutable score arrays; score arrays are aligned with
an id array (positions when no ids are given).
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import SelectionError, UnknownKindError, ValidationError
from .io import read_table, write_rows
from .random import fisher_yates, generator

logger = logging.getLogger(__name__)

# fraction * n is floored after this nudge so that e.g. 0.29 * 100 selects 29
_BUDGET_EPS = 1e-9


class AignLedger:
    """Per-sample running sum and count of input-gradient norms.

    Writers on disjoint id ranges may record concurrently.
    """

    def __init__(self, ids, keep_trajectory=False):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.sum_norm = np.zeros(len(self.ids))
        self.count = np.zeros(len(self.ids), dtype=np.int64)
        self.per_epoch = [] if keep_trajectory else None
        self._position = {int(i): p for p, i in enumerate(self.ids)}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.ids)

    @property
    def epochs(self):
        return int(self.count.max()) if len(self.count) else 0

    def record(self, norms, ids=None):
        """Add one epoch's norms, for all ids or for a shard of them."""
        norms = np.asarray(norms, dtype=np.float64)
        if ids is None:
            rows = np.arange(len(self.ids))
        else:
            try:
                rows = np.array([self._position[int(i)] for i in ids], dtype=np.int64)
            except KeyError as e:
                raise SelectionError(f"ledger has no sample id {e.args[0]}") from None
        if norms.shape != rows.shape:
            raise ValidationError(f"ledger record: {norms.shape[0] if norms.ndim else 0} norms for {len(rows)} ids")
        if np.any(norms < 0) or not np.all(np.isfinite(norms)):
            raise ValidationError("ledger record: norms must be finite and nonnegative")
        with self._lock:
            self.sum_norm[rows] += norms
            self.count[rows] += 1
            if self.per_epoch is not None and ids is None:
                self.per_epoch.append(norms.copy())

    def trajectory(self):
        """[epochs x n] matrix of raw norms, when kept."""
        if self.per_epoch is None:
            raise ValidationError("ledger was created without trajectory tracking")
        return np.vstack(self.per_epoch) if self.per_epoch else np.zeros((0, len(self.ids)))


def aign_scores(ledger):
    if np.any(ledger.count == 0):
        missing = ledger.ids[ledger.count == 0]
        raise ValidationError(f"{len(missing)} sample(s) have no recorded epochs (first id {int(missing[0])})")
    return ledger.sum_norm / ledger.count


def _checked_scores(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(np.isnan(scores)):
        raise ValidationError("scores contain NaN")
    return scores


def _ids_for(scores, ids):
    if ids is None:
        return np.arange(len(scores), dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != scores.shape:
        raise ValidationError(f"{len(ids)} ids for {len(scores)} scores")
    return ids


def budget(fraction, n):
    """floor(fraction * n) for fraction in (0, 1]."""
    if not 0.0 < float(fraction) <= 1.0:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    return min(n, int(math.floor(float(fraction) * n + _BUDGET_EPS)))


def hardness_order(scores, ids=None):
    """Ids sorted by ascending score; ties by ascending id."""
    scores = _checked_scores(scores)
    ids = _ids_for(scores, ids)
    return ids[np.lexsort((ids, scores))]


def easycore_select(scores, fraction, ids=None):
    """The floor(fraction * n) lowest-AIGN ids, easiest first."""
    scores = _checked_scores(scores)
    k = budget(fraction, len(scores))
    if k == 0:
        raise SelectionError(f"fraction {fraction} selects no samples out of {len(scores)}")
    return hardness_order(scores, ids)[:k]


def hardest_select(scores, fraction, ids=None):
    """The floor(fraction * n) highest-AIGN ids, hardest first; ties by ascending id."""
    scores = _checked_scores(scores)
    ids = _ids_for(scores, ids)
    k = budget(fraction, len(scores))
    if k == 0:
        raise SelectionError(f"fraction {fraction} selects no samples out of {len(scores)}")
    return ids[np.lexsort((ids, -scores))][:k]


def easycore_balanced(scores, labels, fraction, ids=None):
    """Per class c, the floor(fraction * n_c) lowest-AIGN ids; classes in ascending order.

    A class whose quota rounds to zero contributes nothing and is reported
    with a warning.
    """
    scores = _checked_scores(scores)
    ids = _ids_for(scores, ids)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != scores.shape:
        raise ValidationError(f"{len(labels)} labels for {len(scores)} scores")
    budget(fraction, len(scores))
    selected = []
    for c in np.unique(labels):
        members = labels == c
        quota = budget(fraction, int(members.sum()))
        if quota == 0:
            logger.warning("class %d: fraction %s of %d samples selects none", int(c), fraction, int(members.sum()))
            continue
        selected.append(hardness_order(scores[members], ids[members])[:quota])
    return np.concatenate(selected) if selected else np.zeros(0, dtype=np.int64)


def uniform_select(n, fraction, seed, ids=None):
    """Seeded sample of floor(fraction * n) ids without replacement."""
    k = budget(fraction, n)
    perm = fisher_yates(n, generator(seed, "uniform-select"))[:k]
    if ids is None:
        return perm
    return np.asarray(ids, dtype=np.int64)[perm]


def normalize_scores(scores):
    scores = _checked_scores(scores)
    top = scores.max() if scores.size else 0.0
    if not top > 0:
        raise ValidationError("cannot normalize: all scores are zero")
    return scores / top


@dataclass(frozen=True)
class CoresetSpec:
    method: str = "easycore"
    fraction: float = 0.6
    seed: int = 0

    def validate(self):
        problems = []
        if self.method not in SELECTION_METHODS:
            problems.append(f"select.method must be one of {', '.join(SELECTION_METHODS)}, got '{self.method}'")
        if not 0.0 < float(self.fraction) <= 1.0:
            problems.append(f"select.fraction must lie in (0, 1], got {self.fraction}")
        if problems:
            raise ValidationError("invalid selection spec", problems)
        return self


def _select_easycore(scores, labels, ids, spec):
    return easycore_select(scores, spec.fraction, ids)


def _select_balanced(scores, labels, ids, spec):
    if labels is None:
        raise ValidationError("easycore_balanced needs per-sample labels")
    return easycore_balanced(scores, labels, spec.fraction, ids)


def _select_uniform(scores, labels, ids, spec):
    return uniform_select(len(scores), spec.fraction, spec.seed, ids)


def _select_hardest(scores, labels, ids, spec):
    return hardest_select(scores, spec.fraction, ids)


SELECTION_METHODS = {
    "easycore": _select_easycore,
    "easycore_balanced": _select_balanced,
    "uniform": _select_uniform,
    "hardest": _select_hardest,
}


def select(spec, scores, labels=None, ids=None):
    """Dispatch a CoresetSpec to its selection method."""
    try:
        method = SELECTION_METHODS[spec.method]
    except KeyError:
        raise UnknownKindError("selection", spec.method, SELECTION_METHODS) from None
    spec.validate()
    chosen = method(np.asarray(scores, dtype=np.float64), labels, ids, spec)
    logger.info("%s selected %d of %d samples (fraction %s)", spec.method, len(chosen), len(scores), spec.fraction)
    return chosen


# ---------------------------------------------------------------------------
# Score and selection files

@dataclass(frozen=True, eq=False)
class ScoreTable:
    ids: np.ndarray
    labels: Optional[np.ndarray]
    aign: np.ndarray
    normalized: np.ndarray


def write_scores(path, ids, labels, scores):
    """CSV 'id,label,aign,normalized'; label cells are empty when unknown."""
    scores = np.asarray(scores, dtype=np.float64)
    normalized = normalize_scores(scores)
    labels = [None] * len(scores) if labels is None else [int(y) for y in labels]
    rows = (
        [int(i), "" if y is None else y, float(s), float(z)]
        for i, y, s, z in zip(ids, labels, scores, normalized)
    )
    return write_rows(path, ["id", "label", "aign", "normalized"], rows)


def read_scores(path):
    cols = read_table(path, ["id", "aign"])
    try:
        ids = np.array([int(v) for v in cols["id"]], dtype=np.int64)
        aign = np.array([float(v) for v in cols["aign"]], dtype=np.float64)
        raw_labels = cols.get("label", [])
        labels = None
        if raw_labels and all(v != "" for v in raw_labels):
            labels = np.array([int(v) for v in raw_labels], dtype=np.int64)
        normalized = (
            np.array([float(v) for v in cols["normalized"]]) if "normalized" in cols else normalize_scores(aign)
        )
    except ValueError as e:
        raise ValidationError(f"{path}: malformed score file ({e})") from None
    return ScoreTable(ids, labels, aign, normalized)


def write_selection(path, ids):
    return write_rows(path, ["rank", "id"], ([rank, int(i)] for rank, i in enumerate(ids)))


def read_selection(path):
    cols = read_table(path, ["rank", "id"])
    try:
        ranked = sorted((int(r), int(i)) for r, i in zip(cols["rank"], cols["id"]))
    except ValueError as e:
        raise ValidationError(f"{path}: malformed selection file ({e})") from None
    return np.array([i for _, i in ranked], dtype=np.int64)
