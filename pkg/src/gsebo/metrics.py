"""Accuracy, edge-strength summaries and multi-run aggregation."""
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .exceptions import ContractError
from .graph import inter_class_ratio


def accuracy(logits, labels, mask):
    """Fraction of masked nodes whose argmax (lowest index on ties) equals the label."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ContractError("accuracy mask is empty")
    pred = np.argmax(np.asarray(logits)[mask], axis=1)
    return float(np.mean(pred == np.asarray(labels)[mask]))


def z_strength_summary(state, bundle):
    """Mean ``clamp01(z)`` over non-loop entries, split by label agreement.

    Returns ``(mean_intra, mean_inter)``; a side with no edges is ``None``.
    For multi-head strengths every head's entries are pooled.
    """
    from .models import structure_for

    st = structure_for(bundle, state.config)
    p = st.pattern
    strength = np.clip(state.z, 0.0, 1.0).reshape(st.heads, p.nnz)
    off_diag = p.rows != p.col_indices
    same = bundle.labels[p.rows] == bundle.labels[p.col_indices]

    def _mean(sel):
        if not sel.any():
            return None
        return float(strength[:, sel].mean())

    return _mean(off_diag & same), _mean(off_diag & ~same)


def aggregate_runs(values):
    """Sample mean and (n-1)-denominator std; std is 0 for a single run.

    Accepts plain numbers or objects exposing ``final_test_accuracy``.
    """
    vals = np.array(
        [getattr(v, "final_test_accuracy", v) for v in values], dtype=np.float64
    )
    if vals.size == 0:
        raise ContractError("need at least one run")
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return float(vals.mean()), std


@dataclass
class EvalReport:
    accuracy_train: float
    accuracy_val: float
    accuracy_test: float
    mean_strength_intra: Optional[float]
    mean_strength_inter: Optional[float]
    inter_class_ratio: float

    FIELDS = (
        "accuracy_train",
        "accuracy_val",
        "accuracy_test",
        "mean_strength_intra",
        "mean_strength_inter",
        "inter_class_ratio",
    )

    def to_tsv(self, header=True):
        row = "\t".join(_fmt(getattr(self, f)) for f in self.FIELDS)
        return ("\t".join(self.FIELDS) + "\n" if header else "") + row + "\n"

    def as_dict(self):
        return asdict(self)


def _fmt(x):
    if x is None:
        return "NA"
    return f"{x:.6f}"


def evaluate(state, bundle, vanilla=False):
    from .models import forward

    logits = forward(state, bundle, training=False, vanilla=vanilla)
    s = bundle.split
    intra, inter = z_strength_summary(state, bundle)
    return EvalReport(
        accuracy(logits, bundle.labels, s.train),
        accuracy(logits, bundle.labels, s.val),
        accuracy(logits, bundle.labels, s.test),
        intra,
        inter,
        inter_class_ratio(bundle.graph, bundle.labels),
    )
