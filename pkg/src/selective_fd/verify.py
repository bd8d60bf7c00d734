"""Built-in oracle checks run by ``sfd verify``."""

from __future__ import annotations

import numpy as np

from . import kulsif, model, numcore, selectors
from .numcore import RngStream


def check_quantile():
    cases = [([1, 2, 3, 4], 0.0, 1.0), ([1, 2, 3, 4], 1.0, 4.0), ([4, 1, 3, 2], 0.25, 1.0),
             ([5, 3, 9], 0.5, 5.0)]
    for values, q, want in cases:
        got = numcore.quantile(values, q)
        if got != want:
            return f"quantile({values}, {q}) = {got}, expected {want}"
    return None


def check_kulsif_1d():
    """Local Uniform[0, 0.5] against background Uniform[0, 1]; truth is 2 on [0, 0.5]."""
    rng = RngStream(0, ("verify", "kulsif"))
    local = rng.child("local").generator().uniform(0.0, 0.5, (500, 1))
    background = rng.child("background").generator().uniform(0.0, 1.0, (500, 1))
    est = kulsif.fit_kulsif(local, background, 0.1, 1e-3)
    grid = np.linspace(0.0, 1.0, 101)
    away = (grid < 0.45) | (grid > 0.55)
    w = kulsif.estimate_ratio(est, grid[:, None])
    mae = float(np.abs(w - 2.0 * (grid <= 0.5))[away].mean())
    tail = float(w[grid >= 0.6].mean())
    if mae > 0.3:
        return f"grid MAE {mae:.3f} > 0.3"
    if tail > 0.2:
        return f"mean ratio on [0.6, 1] is {tail:.3f} > 0.2"
    # calibration must reproduce the lower quantile of validation ratios
    val = rng.child("val").generator().uniform(0.0, 0.5, (40, 1))
    thr = kulsif.calibrate(est, val, 0.25)
    ratios = np.sort(kulsif.estimate_ratio(est, val))
    if thr != ratios[9]:
        return f"calibrated threshold {thr} is not the 10th smallest of 40 ratios"
    return None


def check_rule_equivalence(n=10_000):
    g = RngStream(0, ("verify", "rules")).generator()
    for _ in range(n):
        C = int(g.integers(2, 11))
        p = g.dirichlet(np.full(C, float(g.choice([0.1, 1.0, 10.0]))))
        tau = float(g.uniform(0.0, 2.0)) or 1.0
        if selectors.l1_rule(p, tau) != selectors.confidence_rule(p, tau):
            return f"rules disagree at p={p.tolist()}, tau={tau}"
    return None


def _max_rel_grad_error(targets_kind):
    rng = RngStream(0, ("verify", "grad", targets_kind))
    m = model.init_mlp([3, 5, 4], rng.child("init"), zero_head=False)
    g = rng.child("data").generator()
    X = g.standard_normal((8, 3))
    if targets_kind == "hard":
        T = numcore.onehot(g.integers(0, 4, 8), 4)
    else:
        T = numcore.softmax(g.standard_normal((8, 4)))
    _, gW, gb = model.loss_and_grads(m, X, T)
    analytic = np.concatenate([np.concatenate([a.ravel(), b]) for a, b in zip(gW, gb)])
    theta = m.flat_params()
    eps = 1e-5
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        for sign in (1.0, -1.0):
            t = theta.copy()
            t[i] += sign * eps
            m.set_flat_params(t)
            numeric[i] += sign * model.cross_entropy(model.forward(m, X), T)
        numeric[i] /= 2 * eps
    m.set_flat_params(theta)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradient():
    for kind in ("hard", "soft"):
        err = _max_rel_grad_error(kind)
        if err > 1e-4:
            return f"{kind}-target gradient relative error {err:.2e} > 1e-4"
    return None


CHECKS = {
    "quantile_rule": check_quantile,
    "kulsif_1d_truth": check_kulsif_1d,
    "server_rule_equivalence": check_rule_equivalence,
    "gradient_check": check_gradient,
}


def run_checks():
    """Return ``[(name, failure_reason_or_None), ...]``."""
    results = []
    for name, fn in CHECKS.items():
        try:
            reason = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed verifier
            reason = f"{type(exc).__name__}: {exc}"
        results.append((name, reason))
    return results
