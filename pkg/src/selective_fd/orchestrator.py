"""Federated distillation with selective knowledge sharing, plus baselines.

Round structure for the distillation methods:

1. the server draws a candidate subset of proxy indices;
2. every client predicts on the candidates and drops rows its selector
   rejects;
3. the server averages surviving predictions and drops ambiguous ones;
4. every client takes local SGD steps, then distillation steps on the kept
   proxy rows.

Each client's randomness comes from its own ``RngStream`` path and results
are combined in client order, so thread count never changes the outcome.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from .data import LabeledDataset, PartitionSpec
from .errors import ConfigError
from .kulsif import (
    DEFAULT_BETA,
    DEFAULT_MARGIN,
    calibrate,
    fit_kulsif,
    median_bandwidth,
    sample_background,
)
from .metrics import (
    BoundDiagnostics,
    CommModel,
    RoundStats,
    accuracy,
    bound_diagnostics,
    comm_bytes_round,
    empirical_risk,
    hoeffding_term,
    setup_bytes,
)
from .model import MlpModel, TrainConfig, forward, init_mlp, sgd_step, weighted_step
from .numcore import RngStream, onehot
from .selectors import (
    CONFIDENCE,
    DENSITY_RATIO,
    HARD,
    NONE,
    SOFT,
    SelectorConfig,
    client_filter,
    distill_targets,
    ratio_margin,
    server_aggregate,
    server_filter,
)

log = logging.getLogger(__name__)

SELECTIVE = "selective"
NOSELECTOR = "noselector"
INDEP = "indep"
FEDAVG = "fedavg"
METHODS = (SELECTIVE, NOSELECTOR, INDEP, FEDAVG)

INTERLEAVED = "interleaved"
WEIGHTED = "weighted"

DEFAULT_HIDDEN = ((32,), (64,), (32, 32), (64, 32))
BOUND_DELTA = 0.05


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synth"
    num_classes: int = 4
    dim: int = 2
    n_per_class: int = 400
    n_test_per_class: int = 250
    separation: float = 6.0
    noise: float = 0.8
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # subsample this many training rows per class from IDX data; 0 keeps all
    idx_per_class: int = 0


@dataclass(frozen=True)
class KulsifConfig:
    beta: float = DEFAULT_BETA
    margin: float = DEFAULT_MARGIN
    # n_u = round(background_ratio * n_k)
    background_ratio: float = 1.0
    # 0 selects the median heuristic
    sigma: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    kulsif: KulsifConfig = field(default_factory=KulsifConfig)
    method: str = SELECTIVE
    mode: str = HARD
    schedule: str = INTERLEAVED
    rounds: int = 60
    seed: int = 0
    hidden_dims: tuple = DEFAULT_HIDDEN
    fedavg_hidden: tuple = (64,)
    # auto: size-weighted for dirichlet partitions, uniform otherwise
    fedavg_weighting: str = "auto"

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.mode not in (HARD, SOFT):
            raise ConfigError(f"unknown knowledge mode {self.mode!r}")
        if self.schedule not in (INTERLEAVED, WEIGHTED):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if self.fedavg_weighting not in ("auto", "uniform", "size"):
            raise ConfigError(f"unknown fedavg_weighting {self.fedavg_weighting!r}")
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must list at least one architecture")
        self.train.validate()
        self.selector.validate()

    def effective_selector(self):
        """Selector settings after method overrides (NoSelector disables both)."""
        if self.method == NOSELECTOR:
            return replace(self.selector, client_strategy=NONE, tau_server=2.0)
        return self.selector


@dataclass
class ClientState:
    client_id: int
    model: MlpModel
    train: LabeledDataset
    validation: LabeledDataset
    estimators: list
    rng: RngStream


@dataclass
class RoundLog:
    round: int
    client_acc: list
    mean_acc: float
    local_loss: list
    distill_loss: list
    p_proxy_client: list
    p_proxy_server: float
    upload_bytes: list
    download_bytes: list
    candidate_count: int = 0
    packets_per_client: list = field(default_factory=list)
    records: list = field(default_factory=list, repr=False)
    diagnostics: BoundDiagnostics | None = None
    empirical_risk: float = float("nan")

    @property
    def p_proxy_client_mean(self):
        return float(np.mean(self.p_proxy_client)) if self.p_proxy_client else 0.0

    @property
    def kept_count(self):
        return sum(1 for r in self.records if r.kept)

    @property
    def p_proxy(self):
        """Fraction of candidates that survived both selectors."""
        return self.kept_count / self.candidate_count if self.candidate_count else 0.0

    @property
    def total_upload(self):
        return int(sum(self.upload_bytes))

    @property
    def total_download(self):
        return int(sum(self.download_bytes))


class ExperimentAborted(RuntimeError):
    """Raised by :func:`run_experiment`; carries the logs collected so far."""

    def __init__(self, cause, logs):
        super().__init__(f"run aborted: {cause}")
        self.cause = cause
        self.logs = logs


def thread_count():
    raw = os.environ.get("SFD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SFD_THREADS must be an integer, got {raw!r}")


def _parallel_map(fn, items, threads=None):
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def build_datasets(config):
    """Return ``(train_pool, test)`` for the configured data source."""
    ds = config.dataset
    root = RngStream(config.seed, ("data",))
    if ds.kind == "synth":
        train = data_mod.synth_gaussians(ds.num_classes, ds.dim, ds.n_per_class,
                                         ds.separation, ds.noise, root.child("train"))
        test = data_mod.synth_gaussians(ds.num_classes, ds.dim, ds.n_test_per_class,
                                        ds.separation, ds.noise, root.child("test"))
        return train, test
    if ds.kind == "idx":
        train = data_mod.load_idx(ds.train_images, ds.train_labels, ds.num_classes)
        test = data_mod.load_idx(ds.test_images, ds.test_labels, ds.num_classes)
        if ds.idx_per_class:
            g = root.child("idx_subsample").generator()
            keep = []
            for c in range(train.num_classes):
                rows = np.flatnonzero(train.labels == c)
                keep.append(np.sort(g.permutation(rows)[:ds.idx_per_class]))
            train = train.subset(np.sort(np.concatenate(keep)))
            train = LabeledDataset(train.features, train.labels, train.num_classes)
        return train, test
    raise ConfigError(f"unknown dataset kind {ds.kind!r}")


def client_layer_dims(config, client_id, dim, num_classes):
    if config.method == FEDAVG:
        hidden = tuple(config.fedavg_hidden)
    else:
        hidden = tuple(config.hidden_dims[client_id % len(config.hidden_dims)])
    return [dim, *hidden, num_classes]


def fit_client_estimators(train, validation, proxy_X, kcfg, tau_client, rng):
    """One calibrated KuLSIF estimator per class present in ``train``."""
    box_points = np.vstack([train.features, proxy_X]) if len(proxy_X) else train.features
    sigma = kcfg.sigma if kcfg.sigma > 0 else median_bandwidth(box_points, rng.child("sigma"))
    estimators = []
    for c in train.classes_present():
        local = train.features[train.labels == c]
        n_u = max(1, int(round(kcfg.background_ratio * len(local))))
        background = sample_background(box_points, n_u, rng.child("background", c), kcfg.margin)
        est = fit_kulsif(local, background, sigma, kcfg.beta)
        val = validation.features[validation.labels == c]
        if len(val) == 0:
            val = validation.features
        calibrate(est, val, tau_client)
        estimators.append(est)
    return estimators


def setup(config):
    """Partition data, initialise models, fit and calibrate client selectors."""
    config.validate()
    train_pool, test = build_datasets(config)
    spec = replace(config.partition, seed=config.seed)
    fed = data_mod.partition(train_pool, spec, test)
    fed.proxy_features.setflags(write=False)
    root = RngStream(config.seed, ("clients",))
    C, d = fed.num_classes, train_pool.dim
    fit_selectors = config.method in (SELECTIVE, NOSELECTOR)

    shared_init = None
    if config.method == FEDAVG:
        shared_init = init_mlp(client_layer_dims(config, 0, d, C),
                               RngStream(config.seed, ("fedavg", "init")))

    def make_client(k):
        rng = root.child(k)
        if shared_init is not None:
            model = shared_init.copy()
        else:
            model = init_mlp(client_layer_dims(config, k, d, C), rng.child("init"))
        estimators = []
        if fit_selectors:
            estimators = fit_client_estimators(
                fed.client_train[k], fed.client_validation[k], fed.proxy_features,
                config.kulsif, config.selector.tau_client, rng.child("kulsif"))
        return ClientState(k, model, fed.client_train[k], fed.client_validation[k],
                           estimators, rng)

    clients = _parallel_map(make_client, range(fed.num_clients))
    return clients, fed


def _minibatch(g, n, batch):
    return g.choice(n, size=min(batch, n), replace=False)


def _local_step(client, g, train_config):
    ds = client.train
    idx = _minibatch(g, len(ds), train_config.local_batch)
    T = onehot(ds.labels[idx], client.model.num_classes)
    return sgd_step(client.model, ds.features[idx], T, train_config.learning_rate)


def pretrain(clients, train_config, threads=None):
    def run(client):
        g = client.rng.child("pretrain").generator()
        for _ in range(train_config.pretrain_steps):
            _local_step(client, g, train_config)
        return client

    _parallel_map(run, clients, threads)


def candidate_indices(config, round_index, num_proxy):
    """The server's random subset of proxy rows for one round."""
    t = config.train
    n = min(num_proxy, t.distill_steps * t.distill_batch)
    g = RngStream(config.seed, ("server", "candidates", round_index)).generator()
    return np.sort(g.choice(num_proxy, size=n, replace=False))


def selector_scores(client, X, strategy=DENSITY_RATIO):
    """Continuous scores behind the client's keep decision (higher = keep)."""
    if strategy == DENSITY_RATIO:
        return ratio_margin(client.estimators, X)
    if strategy == CONFIDENCE:
        return forward(client.model, X).max(axis=1)
    raise ConfigError(f"no continuous score for strategy {strategy!r}")


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else float("nan")


def _train_client(client, config, round_index, kept_X, targets):
    tc = config.train
    rng = client.rng.child("round", round_index)
    g_local = rng.child("local").generator()
    g_distill = rng.child("distill").generator()
    local_losses, distill_losses = [], []
    if config.schedule == WEIGHTED and kept_X is not None:
        ds = client.train
        for _ in range(tc.local_steps + tc.distill_steps):
            li = _minibatch(g_local, len(ds), tc.local_batch)
            pi = _minibatch(g_distill, len(kept_X), tc.distill_batch)
            loss = weighted_step(client.model, ds.features[li],
                                 onehot(ds.labels[li], client.model.num_classes),
                                 kept_X[pi], targets[pi], tc.alpha, tc.learning_rate)
            local_losses.append(loss)
        return _mean(local_losses), float("nan")
    for _ in range(tc.local_steps):
        local_losses.append(_local_step(client, g_local, tc))
    if kept_X is not None:
        for _ in range(tc.distill_steps):
            pi = _minibatch(g_distill, len(kept_X), tc.distill_batch)
            distill_losses.append(
                sgd_step(client.model, kept_X[pi], targets[pi], tc.learning_rate))
    return _mean(local_losses), _mean(distill_losses)


def evaluate(clients, test, threads=None):
    return _parallel_map(lambda c: accuracy(c.model, test), clients, threads)


def _comm_model(config, num_classes, clients):
    return CommModel(num_classes=num_classes, param_count=clients[0].model.param_count())


def run_round(clients, proxy_X, test, config, round_index, threads=None):
    """One round of the configured distillation method (or IndepLearn).

    Receives proxy features only; ground-truth proxy labels never reach this
    function.
    """
    C = clients[0].model.num_classes
    K = len(clients)
    sel = config.effective_selector()
    mode = config.mode

    if config.method == INDEP:
        losses = _parallel_map(
            lambda c: _train_client(c, config, round_index, None, None), clients, threads)
        acc = evaluate(clients, test, threads)
        return RoundLog(round_index, acc, float(np.mean(acc)),
                        [l for l, _ in losses], [d for _, d in losses],
                        [0.0] * K, 0.0, [0] * K, [0] * K)

    cand = candidate_indices(config, round_index, len(proxy_X))
    cand_X = proxy_X[cand]

    def predict_and_filter(client):
        probs = forward(client.model, cand_X)
        return client_filter(client.client_id, client.estimators, cand_X, probs,
                             sel.client_strategy, mode=mode, sample_indices=cand,
                             confidence_cutoff=sel.confidence_cutoff)

    per_client = _parallel_map(predict_and_filter, clients, threads)
    # barrier: aggregation sees every client's packets before anyone distills
    packets = [pk for pks in per_client for pk in pks]
    records = server_filter(server_aggregate(packets, C), sel.tau_server)
    dist = distill_targets(records, mode)
    kept_X, targets = (None, None) if dist is None else (proxy_X[dist[0]], dist[1])

    losses = _parallel_map(
        lambda c: _train_client(c, config, round_index, kept_X, targets), clients, threads)
    acc = evaluate(clients, test, threads)

    counts = [len(p) for p in per_client]
    kept = 0 if dist is None else len(dist[0])
    cm = _comm_model(config, C, clients)
    per_packet = cm.packet_bytes(mode)
    n_cand = len(cand)
    log_ = RoundLog(
        round=round_index,
        client_acc=acc,
        mean_acc=float(np.mean(acc)),
        local_loss=[l for l, _ in losses],
        distill_loss=[d for _, d in losses],
        p_proxy_client=[n / n_cand if n_cand else 0.0 for n in counts],
        p_proxy_server=kept / len(records) if records else 0.0,
        upload_bytes=[n * per_packet for n in counts],
        download_bytes=[kept * per_packet] * K,
        candidate_count=n_cand,
        packets_per_client=counts,
        records=records,
    )
    assert (log_.total_upload, log_.total_download) == comm_bytes_round(
        RoundStats(counts, kept, K), mode, cm, config.method)
    if dist is not None:
        risks = [empirical_risk(c.model, c.train, kept_X, targets, config.train.alpha)
                 for c in clients]
        log_.empirical_risk = float(np.mean(risks))
    return log_


def fedavg_weights(clients, config):
    weighting = config.fedavg_weighting
    if weighting == "auto":
        weighting = "size" if config.partition.mode == data_mod.DIRICHLET else "uniform"
    if weighting == "size":
        sizes = np.array([len(c.train) for c in clients], dtype=np.float64)
        return sizes / sizes.sum()
    return np.full(len(clients), 1.0 / len(clients))


def average_models(clients, weights):
    dims = clients[0].model.layer_dims
    for c in clients:
        if c.model.layer_dims != dims:
            raise ConfigError("FedAvg needs every client to share one architecture")
    total = np.zeros(clients[0].model.param_count())
    for w, c in zip(weights, clients):
        total += w * c.model.flat_params()
    for c in clients:
        c.model.set_flat_params(total)


def run_fedavg_round(clients, test, config, round_index, threads=None):
    tc = config.train
    steps = tc.local_steps + tc.distill_steps

    def local(client):
        g = client.rng.child("round", round_index, "fedavg").generator()
        return _mean([_local_step(client, g, tc) for _ in range(steps)])

    first = clients[0].model.layer_dims
    if any(c.model.layer_dims != first for c in clients):
        raise ConfigError("FedAvg needs every client to share one architecture")
    losses = _parallel_map(local, clients, threads)
    average_models(clients, fedavg_weights(clients, config))
    acc = evaluate(clients, test, threads)
    K = len(clients)
    per_client = clients[0].model.param_count() * 8
    return RoundLog(round_index, acc, float(np.mean(acc)), losses, [float("nan")] * K,
                    [0.0] * K, 0.0, [per_client] * K, [per_client] * K)


def initial_log(clients, test):
    acc = evaluate(clients, test)
    K = len(clients)
    nan = [float("nan")] * K
    return RoundLog(0, acc, float(np.mean(acc)), nan, nan, [0.0] * K, 0.0, [0] * K, [0] * K)


def attach_diagnostics(round_log, fed, config):
    """Compute truth-dependent bound terms after the round has finished."""
    if config.method not in (SELECTIVE, NOSELECTOR):
        return
    kept = round_log.kept_count
    m_k = int(round(np.mean([len(d) for d in fed.client_train])))
    hoeff = hoeffding_term(config.train.alpha, m_k, kept, BOUND_DELTA) if kept else float("nan")
    round_log.diagnostics = bound_diagnostics(round_log.records, fed.proxy_truth, hoeff)


def run_experiment(config, on_round=None, threads=None, on_setup=None):
    """Setup, pretraining, then ``config.rounds`` rounds.

    Returns the post-pretraining evaluation (round 0) followed by one log per
    round. On failure raises :class:`ExperimentAborted` holding partial logs.
    """
    logs = []
    try:
        clients, fed = setup(config)
        if on_setup is not None:
            on_setup(clients, fed)
        pretrain(clients, config.train, threads)
        logs.append(initial_log(clients, fed.test))
        for t in range(1, config.rounds + 1):
            if config.method == FEDAVG:
                rl = run_fedavg_round(clients, fed.test, config, t, threads)
            else:
                rl = run_round(clients, fed.proxy_features, fed.test, config, t, threads)
            attach_diagnostics(rl, fed, config)
            logs.append(rl)
            if on_round is not None:
                on_round(rl)
            log.debug("round %d mean acc %.4f", t, rl.mean_acc)
    except Exception as exc:
        raise ExperimentAborted(exc, logs) from exc
    return logs


def fd_setup_bytes(fed):
    cm = CommModel(num_classes=fed.num_classes)
    return setup_bytes(*fed.proxy_features.shape, cm)
