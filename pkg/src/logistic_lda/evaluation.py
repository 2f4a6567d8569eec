"""Accuracy metrics, topic matching, and topic browsing."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError
from .mean_field import flatten_groups
from .training import predict_corpus

__all__ = [
    "EvalReport",
    "accuracy",
    "majority_vote",
    "match_topics",
    "confusion_matrix",
    "evaluation_report",
    "top_items_per_topic",
]


@dataclass
class EvalReport:
    """Metrics of one evaluation pass.  Fields that need labels the caller
    did not supply stay None."""

    group_accuracy: float = None
    item_accuracy: float = None
    confusion: np.ndarray = None          # rows true, columns predicted
    topic_usage: np.ndarray = None        # histogram of predicted item topics
    matched_permutation: np.ndarray = None  # predicted topic -> true topic
    matched_group_accuracy: float = None
    matched_item_accuracy: float = None

    def to_dict(self):
        out = {}
        for name, val in self.__dict__.items():
            if val is None:
                continue
            out[name] = val.tolist() if isinstance(val, np.ndarray) else val
        return out


def accuracy(pred, true):
    """Fraction of exact matches."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size < 1:
        raise ContractError("pred and true must be equal-length non-empty vectors")
    return float(np.mean(pred == true))


def majority_vote(predictions):
    """Modal label of one group's item predictions; ties break to the
    lowest label."""
    p = np.asarray(predictions, dtype=np.int64)
    if p.ndim != 1 or p.size < 1:
        raise ContractError("need at least one prediction")
    if np.any(p < 0):
        raise ContractError("labels must be non-negative")
    return int(np.bincount(p).argmax())  # argmax takes the first maximum


def confusion_matrix(true, pred, K):
    """(K, K) counts, true topics as rows."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ContractError("label vectors must have equal length")
    if true.size and (true.min() < 0 or true.max() >= K or pred.min() < 0 or pred.max() >= K):
        raise ContractError(f"labels must lie in [0, {K})")
    C = np.zeros((K, K))
    np.add.at(C, (true, pred), 1.0)
    return C


def match_topics(confusion):
    """Optimal assignment of predicted topics to true ones.

    Returns (perm, matched_accuracy) where perm[j] is the true topic
    assigned to predicted topic j and matched_accuracy the fraction of
    mass on the matched diagonal.
    """
    C = np.asarray(confusion, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
        raise ContractError("confusion must be a square matrix")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise ContractError("confusion entries must be finite and non-negative")
    total = C.sum()
    if total <= 0:
        raise ContractError("confusion matrix is empty")
    rows, cols = linear_sum_assignment(-C)
    perm = np.empty(C.shape[0], dtype=np.int64)
    perm[cols] = rows
    return perm, float(C[rows, cols].sum() / total)


def evaluation_report(pred_groups=None, true_groups=None, pred_items=None,
                      true_items=None, K=None) -> EvalReport:
    """Assemble every metric the supplied label vectors allow.

    Direct accuracies treat predicted topics as labels; matched accuracies
    first align topics to the truth with match_topics (the unsupervised
    reading of the same confusion matrix).
    """
    if K is None or K < 1:
        raise ContractError("K must be a positive integer")
    rep = EvalReport()
    if pred_items is not None:
        rep.topic_usage = np.bincount(np.asarray(pred_items, dtype=np.int64), minlength=K)
    if pred_groups is not None and true_groups is not None:
        rep.confusion = confusion_matrix(true_groups, pred_groups, K)
        rep.group_accuracy = accuracy(pred_groups, true_groups)
        perm, matched = match_topics(rep.confusion)
        rep.matched_permutation = perm
        rep.matched_group_accuracy = matched
    if pred_items is not None and true_items is not None:
        rep.item_accuracy = accuracy(pred_items, true_items)
        item_conf = confusion_matrix(true_items, pred_items, K)
        perm, matched = match_topics(item_conf)
        rep.matched_item_accuracy = matched
        if rep.matched_permutation is None:
            rep.matched_permutation = perm
    return rep


def top_items_per_topic(corpus, theta, hyper, n, converged=True):
    """For each topic, the n items whose inferred belief in it is highest.

    Returns one list per topic of (item_index, score, text) triples sorted
    by descending score, ties resolved by corpus order.  text is the
    vocabulary word when the corpus carries one, the token id for bare
    token corpora, and group_id[position] for dense corpora.
    """
    if n < 0:
        raise ContractError("n must be >= 0")
    flat = flatten_groups(corpus.groups)
    _, _, P = predict_corpus(flat, theta, hyper, converged=converged)
    K = P.shape[1]
    texts = []
    for g in corpus.groups:
        for j, it in enumerate(g.items):
            if it.token is not None:
                texts.append(corpus.vocab[it.token] if corpus.vocab else str(it.token))
            else:
                texts.append(f"{g.id}[{j}]")
    out = []
    for k in range(K):
        order = np.argsort(-P[:, k], kind="stable")[:n]
        out.append([(int(i), float(P[i, k]), texts[i]) for i in order])
    return out
