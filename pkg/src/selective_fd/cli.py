"""Command-line driver: ``sfd run``, ``sfd sweep`` and ``sfd verify``.

Precedence for every setting: command-line flag, then config file, then the
built-in default.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, verify
from .config import load_config, set_key, to_flat
from .errors import SFDError
from .orchestrator import ExperimentAborted, fd_setup_bytes, run_experiment

CSV_HEADER = ("round,client_id,test_acc,local_loss,distill_loss,p_proxy_client,"
              "p_proxy_server,upload_bytes,download_bytes,p1,misleading_term,ambiguous_term")


@dataclass
class RunManifest:
    config: dict
    seed: int
    version: str = __version__
    started: str = ""
    outputs: dict = field(default_factory=dict)
    defaulted: list = field(default_factory=list)

    def to_json(self):
        return {
            "version": self.version,
            "seed": self.seed,
            "started": self.started,
            "outputs": self.outputs,
            "defaulted_keys": self.defaulted,
            "config": self.config,
        }


def _num(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rounds_csv(logs):
    """CSV text for rounds >= 1 (round 0, the pretraining baseline, goes to summary)."""
    nan = float("nan")
    lines = [CSV_HEADER]
    for rl in logs:
        if rl.round < 1:
            continue
        d = rl.diagnostics
        diag = (d.p1, d.misleading_term, d.ambiguous_term) if d is not None else (nan, nan, nan)
        tail = [_num(x) for x in diag]
        for k, acc in enumerate(rl.client_acc):
            row = [str(rl.round), str(k), _num(acc), _num(rl.local_loss[k]),
                   _num(rl.distill_loss[k]), _num(rl.p_proxy_client[k]),
                   _num(rl.p_proxy_server), _num(rl.upload_bytes[k]),
                   _num(rl.download_bytes[k])] + tail
            lines.append(",".join(row))
        # aggregate row: means for rates and losses, totals for bytes
        row = [str(rl.round), "-1", _num(rl.mean_acc), _num(float(np.mean(rl.local_loss))),
               _num(float(np.mean(rl.distill_loss))), _num(rl.p_proxy_client_mean),
               _num(rl.p_proxy_server), _num(rl.total_upload), _num(rl.total_download)] + tail
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def summary(logs, manifest, partial=False, setup_bytes=0):
    done = [rl for rl in logs if rl.round >= 1]
    up = sum(rl.total_upload for rl in done)
    down = sum(rl.total_download for rl in done)

    def clean(x):
        return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

    return {
        "partial": partial,
        "rounds_completed": len(done),
        "pretrain_mean_acc": clean(logs[0].mean_acc) if logs else None,
        "final_mean_acc": clean(logs[-1].mean_acc) if logs else None,
        "final_client_acc": list(logs[-1].client_acc) if logs else [],
        "total_upload_bytes": up,
        "total_download_bytes": down,
        "total_bytes": up + down,
        "setup_bytes": setup_bytes,
        "mean_p_proxy": float(np.mean([rl.p_proxy for rl in done])) if done else None,
        "config": manifest.config,
    }


def emit_results(logs, manifest, out_dir, partial=False, setup_bytes=0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.outputs = {name: str(out / name)
                        for name in ("manifest.json", "rounds.csv", "summary.json")}
    _write_atomic(out / "manifest.json", json.dumps(manifest.to_json(), indent=2) + "\n")
    _write_atomic(out / "rounds.csv", rounds_csv(logs))
    _write_atomic(out / "summary.json",
                  json.dumps(summary(logs, manifest, partial, setup_bytes), indent=2) + "\n")


def preflight(out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".preflight."):
            pass
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc.strerror or exc}") from exc


def _resolve(args, overrides=()):
    config, explicit = load_config(args.config)
    explicit = set(explicit)
    for key, value in overrides:
        config = set_key(config, key, value)
        explicit.add(key)
    config.validate()
    return config, explicit


def _flag_overrides(args):
    out = []
    if getattr(args, "seed", None) is not None:
        out.append(("seed", str(args.seed)))
    if getattr(args, "method", None) is not None:
        out.append(("method", args.method))
    if getattr(args, "mode", None) is not None:
        out.append(("mode", args.mode))
    return out


def execute(config, explicit, out_dir, stream=None):
    """Run one experiment and write its outputs; returns the logs."""
    stream = sys.stderr if stream is None else stream
    preflight(out_dir)
    flat = to_flat(config)
    manifest = RunManifest(
        config=flat,
        seed=config.seed,
        started=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        defaulted=[k for k in flat if k not in explicit],
    )
    note = " (default)" if "tau_server" not in explicit else ""
    print(f"sfd {config.method} mode={config.mode} K={config.partition.num_clients} "
          f"T={config.rounds} seed={config.seed} tau_client={config.selector.tau_client} "
          f"tau_server={config.selector.tau_server}{note}", file=stream)
    setup_cost = []

    def on_setup(clients, fed):
        fd = config.method in ("selective", "noselector")
        setup_cost.append(fd_setup_bytes(fed) if fd else 0)

    try:
        logs = run_experiment(config, on_setup=on_setup)
    except ExperimentAborted as exc:
        emit_results(exc.logs, manifest, out_dir, partial=True,
                     setup_bytes=setup_cost[0] if setup_cost else 0)
        raise
    emit_results(logs, manifest, out_dir, setup_bytes=setup_cost[0])
    return logs


def cmd_run(args):
    config, explicit = _resolve(args, _flag_overrides(args))
    logs = execute(config, explicit, args.out)
    print(f"final mean accuracy {logs[-1].mean_acc:.4f}; results in {args.out}")
    return 0


def cmd_sweep(args):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise SFDError("--values is empty")
    base, explicit = _resolve(args, _flag_overrides(args))
    for value in values:
        config = set_key(base, args.param, value)
        config.validate()
        out = Path(args.out) / f"{args.param}={value}"
        logs = execute(config, explicit | {args.param}, out)
        print(f"{args.param}={value}: final mean accuracy {logs[-1].mean_acc:.4f}")
    return 0


def cmd_verify(args):
    failed = []
    for name, reason in verify.run_checks():
        print(f"{'PASS' if reason is None else 'FAIL'} {name}" + ("" if reason is None else f": {reason}"))
        if reason is not None:
            failed.append(name)
    if failed:
        print(f"verify failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="sfd",
        description="Selective federated distillation simulator.",
        epilog="Flag values override config-file values, which override defaults. "
               "SFD_THREADS caps worker threads; results do not depend on it.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--method", choices=["selective", "noselector", "indep", "fedavg"])
    run.add_argument("--mode", choices=["hard", "soft"])
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per parameter value")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--method", choices=["selective", "noselector", "indep", "fedavg"])
    sweep.add_argument("--mode", choices=["hard", "soft"])
    sweep.set_defaults(func=cmd_sweep)

    ver = sub.add_parser("verify", help="run the built-in oracle checks")
    ver.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExperimentAborted as exc:
        print(f"error: {exc.cause}", file=sys.stderr)
        return 1
    except (SFDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
