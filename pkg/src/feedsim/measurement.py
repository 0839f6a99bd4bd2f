"""Thresholding of precomputed toxicity scores and classifier evaluation.

Scores arrive from an external rater; nothing here looks at text.  A post
is toxic when its score is strictly greater than the threshold.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

DEFAULT_THRESHOLD = 0.2
DEFAULT_GRID = (0.1, 0.2, 0.3, 0.35)
REPORT_COLUMNS = ["threshold", "tp", "fp", "tn", "fn", "precision", "recall", "f1"]


@dataclass(frozen=True)
class ScoredItem:
    score: float
    true_label: Optional[bool] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score!r}")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class Evaluation:
    threshold: float
    confusion: ConfusionMatrix

    @property
    def precision(self):
        return self.confusion.precision

    @property
    def recall(self):
        return self.confusion.recall

    @property
    def f1(self):
        return self.confusion.f1

    def row(self):
        c = self.confusion
        return dict(threshold=self.threshold, tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn,
                    precision=c.precision, recall=c.recall, f1=c.f1)


def _check_unit(x, name):
    a = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(a)) or np.any((a < 0) | (a > 1)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return a


def binarize(score, threshold=DEFAULT_THRESHOLD):
    """True where ``score > threshold`` (strict, so a score at the threshold is not toxic).

    >>> binarize(0.643), binarize(0.174), binarize(0.2)
    (True, False, False)
    """
    s = _check_unit(score, "score")
    _check_unit(threshold, "threshold")
    out = s > threshold
    return bool(out) if out.ndim == 0 else out


def _scores_labels(items):
    """Scores and labels of the labeled items, from ScoredItems or a scores frame."""
    if isinstance(items, pd.DataFrame):
        if "label" not in items:
            raise ValueError("no labeled items")
        lab = items["label"]
        keep = lab.notna().to_numpy()
        return (_check_unit(items["score"].to_numpy(dtype=float)[keep], "score"),
                lab[keep].astype(bool).to_numpy())
    pairs = [(it.score, bool(it.true_label)) for it in items if it.true_label is not None]
    if not pairs:
        raise ValueError("no labeled items")
    s, y = map(np.asarray, zip(*pairs))
    return s.astype(float), y.astype(bool)


def _confusion(scores, labels, threshold):
    pred = binarize(scores, threshold)
    pred = np.atleast_1d(pred)
    return ConfusionMatrix(tp=int(np.sum(pred & labels)), fp=int(np.sum(pred & ~labels)),
                           tn=int(np.sum(~pred & ~labels)), fn=int(np.sum(~pred & labels)))


def evaluate(items, threshold=DEFAULT_THRESHOLD):
    """Confusion matrix, precision, recall and F1 at one threshold.

    F1 is zero when precision and recall are both zero.
    """
    s, y = _scores_labels(items)
    if s.size == 0:
        raise ValueError("no labeled items")
    return Evaluation(float(threshold), _confusion(s, y, threshold))


def threshold_report(items, thresholds=DEFAULT_GRID):
    """One row per threshold with the report CSV columns."""
    s, y = _scores_labels(items)
    if s.size == 0:
        raise ValueError("no labeled items")
    rows = [Evaluation(float(t), _confusion(s, y, t)).row() for t in thresholds]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def select_threshold(items, thresholds=DEFAULT_GRID, tpr_tolerance=0.0):
    """Best threshold by true-positive capture, then F1.

    Candidates whose recall is within ``tpr_tolerance`` of the best recall
    are kept, and the one with the highest F1 wins; remaining ties go to
    the lowest threshold.

    Returns
    -------
    threshold : float
    report : pandas.DataFrame
        The per-threshold report with a boolean ``selected`` column.
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("no candidate thresholds")
    report = threshold_report(items, thresholds)
    keep = report["recall"] >= report["recall"].max() - tpr_tolerance
    cand = report[keep]
    best = cand["f1"].max()
    chosen = float(cand.loc[cand["f1"] == best, "threshold"].min())
    report["selected"] = report["threshold"] == chosen
    return chosen, report


def read_scores(path):
    """Scores CSV with columns ``item_id, score`` and an optional ``label``."""
    df = pd.read_csv(path)
    missing = {"item_id", "score"} - set(df.columns)
    if missing:
        raise ValueError(f"scores file lacks columns {sorted(missing)}")
    _check_unit(df["score"].to_numpy(dtype=float), "score")
    if "label" in df:
        df["label"] = df["label"].map(_parse_label)
    return df


def _parse_label(v):
    if pd.isna(v):
        return None
    if isinstance(v, str):
        t = v.strip().lower()
        if t in ("1", "true", "toxic", "yes"):
            return True
        if t in ("0", "false", "non-toxic", "no"):
            return False
        raise ValueError(f"unrecognised label {v!r}")
    return bool(v)


def score_items(df, threshold=DEFAULT_THRESHOLD):
    """Scores frame with a ``toxic`` column added."""
    out = df.copy()
    out["toxic"] = binarize(out["score"].to_numpy(dtype=float), threshold)
    return out
