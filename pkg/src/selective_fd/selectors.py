"""Client-side and server-side knowledge selectors and ensemble aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ProtocolError
from .kulsif import estimate_ratio, require_calibrated
from .numcore import argmax_rows

DENSITY_RATIO = "density_ratio"
CONFIDENCE = "confidence"
NONE = "none"
CLIENT_STRATEGIES = (DENSITY_RATIO, CONFIDENCE, NONE)

HARD = "hard"
SOFT = "soft"


@dataclass(frozen=True)
class KnowledgePacket:
    sample_index: int
    client_id: int
    # int class id in hard mode, probability vector in soft mode
    payload: object

    @property
    def is_hard(self):
        return not isinstance(self.payload, np.ndarray)


@dataclass
class EnsembleRecord:
    sample_index: int
    mean_prediction: np.ndarray
    contributor_count: int
    l1_ambiguity: float
    kept: bool | None = None

    @property
    def hard_label(self):
        return int(np.argmax(self.mean_prediction))

    @property
    def confidence(self):
        return float(self.mean_prediction.max())


@dataclass(frozen=True)
class SelectorConfig:
    client_strategy: str = DENSITY_RATIO
    tau_client: float = 0.25
    confidence_cutoff: float = 0.9
    tau_server: float = 1.0

    def validate(self):
        if self.client_strategy not in CLIENT_STRATEGIES:
            raise ParameterError(f"unknown client strategy {self.client_strategy!r}")
        if not 0.0 <= self.tau_client <= 1.0:
            raise ParameterError("tau_client must lie in [0, 1]")
        if not 0.0 <= self.confidence_cutoff <= 1.0:
            raise ParameterError("confidence_cutoff must lie in [0, 1]")
        if not 0.0 < self.tau_server <= 2.0:
            raise ParameterError("tau_server must lie in (0, 2]")


def ratio_margin(estimators, X):
    """Per-row ``max_e (ratio_e(x) - threshold_e)`` over a client's estimators."""
    best = None
    for est in estimators:
        require_calibrated(est)
        m = estimate_ratio(est, X) - est.threshold
        best = m if best is None else np.maximum(best, m)
    return best


def client_keep_mask(estimators, proxy_X, local_probs, strategy, confidence_cutoff=0.9):
    n = len(local_probs)
    if strategy == NONE:
        return np.ones(n, dtype=bool)
    if strategy == CONFIDENCE:
        return np.asarray(local_probs).max(axis=1) >= confidence_cutoff
    if strategy == DENSITY_RATIO:
        if not estimators:
            return np.zeros(n, dtype=bool)
        return ratio_margin(estimators, proxy_X) >= 0.0
    raise ParameterError(f"unknown client strategy {strategy!r}")


def client_filter(client_id, estimators, proxy_X, local_probs, strategy,
                  mode=SOFT, sample_indices=None, confidence_cutoff=0.9):
    """Drop predictions on proxy rows the client considers out of distribution.

    Returns packets in ascending ``sample_index`` order. ``sample_indices``
    maps rows of ``proxy_X`` to global proxy ids (defaults to ``0..n-1``).
    """
    local_probs = np.asarray(local_probs, dtype=np.float64)
    if len(local_probs) != len(proxy_X):
        raise ParameterError("need one local prediction per proxy row")
    if sample_indices is None:
        sample_indices = np.arange(len(proxy_X))
    sample_indices = np.asarray(sample_indices)
    keep = client_keep_mask(estimators, proxy_X, local_probs, strategy, confidence_cutoff)
    labels = argmax_rows(local_probs)
    rows = np.flatnonzero(keep)
    rows = rows[np.argsort(sample_indices[rows], kind="stable")]
    if mode == HARD:
        return [KnowledgePacket(int(sample_indices[i]), client_id, int(labels[i])) for i in rows]
    return [KnowledgePacket(int(sample_indices[i]), client_id, local_probs[i].copy()) for i in rows]


def l1_to_onehot(p):
    """``|p - onehot(argmax p)|_1``."""
    p = np.asarray(p, dtype=np.float64)
    q = p.copy()
    q[int(np.argmax(p))] -= 1.0
    return float(np.abs(q).sum())


def server_aggregate(packets, num_classes):
    """Average packets per proxy sample, summing in ascending client order."""
    if not packets:
        return []
    kinds = {pk.is_hard for pk in packets}
    if len(kinds) > 1:
        raise ProtocolError("hard and soft payloads mixed in one round")
    hard = kinds.pop()
    groups = {}
    for pk in packets:
        groups.setdefault(pk.sample_index, []).append(pk)
    records = []
    for idx in sorted(groups):
        group = sorted(groups[idx], key=lambda pk: pk.client_id)
        total = np.zeros(num_classes)
        for pk in group:
            if hard:
                total[pk.payload] += 1.0
            else:
                total += pk.payload
        mean = total / len(group)
        records.append(EnsembleRecord(idx, mean, len(group), l1_to_onehot(mean)))
    return records


def l1_rule(mean_prediction, tau_server):
    return l1_to_onehot(mean_prediction) <= tau_server


def confidence_rule(mean_prediction, tau_server):
    # identical decision to l1_rule: |p - onehot|_1 = 2 (1 - max p)
    return float(np.max(mean_prediction)) >= 1.0 - tau_server / 2.0


def server_filter(records, tau_server):
    if not tau_server > 0:
        raise ParameterError("tau_server must be positive")
    for r in records:
        r.kept = r.l1_ambiguity <= tau_server
    return records


def distill_targets(records, mode):
    """``(sample_indices, targets)`` for kept records, ascending by index.

    Returns ``None`` when nothing survived, meaning no distillation this round.
    """
    kept = sorted((r for r in records if r.kept), key=lambda r: r.sample_index)
    if not kept:
        return None
    idx = np.array([r.sample_index for r in kept], dtype=np.int64)
    P = np.vstack([r.mean_prediction for r in kept])
    if mode == HARD:
        T = np.zeros_like(P)
        T[np.arange(len(P)), argmax_rows(P)] = 1.0
        return idx, T
    return idx, P
