"""Evaluation metrics, communication accounting and bound diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .model import predict_hard
from .selectors import HARD

FD_METHODS = ("selective", "noselector")


def accuracy(model, test):
    if len(test) == 0:
        raise ParameterError("empty test set")
    return float(np.mean(predict_hard(model, test.features) == test.labels))


def auroc(scores, is_positive):
    """Mann-Whitney AUROC; ties between a positive and a negative count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_positive, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("auroc needs at least one positive and one negative")
    neg = np.sort(s[~y])
    pos = s[y]
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    wins = below.sum() + 0.5 * (upto - below).sum()
    return float(wins / (n_pos * n_neg))


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class CommModel:
    num_classes: int
    bytes_per_float: int = 8
    bytes_per_index: int = 4
    param_count: int = 0

    def payload_bytes(self, mode):
        return self.bytes_per_index if mode == HARD else self.num_classes * self.bytes_per_float

    def packet_bytes(self, mode):
        return self.bytes_per_index + self.payload_bytes(mode)


@dataclass
class RoundStats:
    """Counts needed for byte accounting of one round."""

    packets_per_client: list
    kept_records: int
    num_clients: int


def comm_bytes_round(stats, mode, comm_model, method):
    """Return ``(upload, download)`` payload bytes for one round, all clients."""
    if method == "fedavg":
        b = stats.num_clients * comm_model.param_count * comm_model.bytes_per_float
        return b, b
    if method == "indep":
        return 0, 0
    per = comm_model.packet_bytes(mode)
    upload = sum(stats.packets_per_client) * per
    download = stats.kept_records * per * stats.num_clients
    return upload, download


def setup_bytes(num_proxy_rows, dim, comm_model):
    """One-time cost of distributing the proxy pool's features."""
    return num_proxy_rows * dim * comm_model.bytes_per_float


def hoeffding_term(alpha, m_k, m_proxy, delta):
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError("alpha must lie in [0, 1]")
    if m_k < 1 or m_proxy < 1:
        raise ParameterError("sample counts must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    spread = 2.0 * alpha ** 2 / m_k + 2.0 * (1.0 - alpha) ** 2 / m_proxy
    return math.sqrt(spread * math.log(2.0 / delta))


@dataclass
class BoundDiagnostics:
    p1: float
    p2: float
    misleading_term: float
    ambiguous_term: float
    hoeffding_term: float = float("nan")
    # per-record extremes, for checking the threshold inequalities
    min_misleading: float = float("nan")
    max_ambiguous: float = float("nan")
    num_kept: int = 0


def _l1(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def bound_diagnostics(records, proxy_truth, hoeffding=float("nan")):
    """Misleading/ambiguous terms over kept records, using hidden truth."""
    kept = [r for r in records if r.kept]
    mis, amb = [], []
    for r in kept:
        p = r.mean_prediction
        truth = int(proxy_truth[r.sample_index])
        if r.hard_label != truth:
            t = np.zeros_like(p)
            t[truth] = 1.0
            mis.append(_l1(t, p))
        else:
            amb.append(r.l1_ambiguity)
    n = len(kept)
    p1 = len(mis) / n if n else 0.0
    return BoundDiagnostics(
        p1=p1,
        p2=1.0 - p1,
        misleading_term=float(np.mean(mis)) if mis else 0.0,
        ambiguous_term=float(np.mean(amb)) if amb else 0.0,
        hoeffding_term=hoeffding,
        min_misleading=min(mis) if mis else float("nan"),
        max_ambiguous=max(amb) if amb else float("nan"),
        num_kept=n,
    )


def empirical_risk(model, local, proxy_X, proxy_targets, alpha):
    """Mixed l1 risk of the model's one-hot predictions on local and proxy rows."""
    C = model.num_classes
    eye = np.eye(C)
    local_pred = eye[predict_hard(model, local.features)]
    risk = alpha * np.abs(local_pred - eye[local.labels]).sum(axis=1).mean()
    if proxy_X is not None and len(proxy_X):
        proxy_pred = eye[predict_hard(model, proxy_X)]
        risk += (1.0 - alpha) * np.abs(proxy_pred - proxy_targets).sum(axis=1).mean()
    return float(risk)
