"""Command-line entry point: single runs, cm/vanilla comparison, sweeps, and
numeric verification of the shrinking-step descent property."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys

import numpy as np

from .matching import verify_descent_contraction
from .orchestrator import RunConfig, run
from .reporting import compare_csv_text, write_summary, write_text_atomic

SWEEP_KEYS = ("clients", "model_scale", "k_configured")
CONFIG_ONLY_KEYS = ("out_dir", "sweep")


class ConfigError(Exception):
    pass


def _config_field_names() -> set[str]:
    return {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    allowed = _config_field_names() | set(CONFIG_ONLY_KEYS)
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {key}")
    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be a JSON object")
    for key in sweep:
        if key not in SWEEP_KEYS:
            raise ConfigError(f"unknown sweep key: {key}")
    return raw


def build_config(file_values: dict, args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in file_values.items() if k in _config_field_names()}
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        values["mode"] = args.mode
    if getattr(args, "clustering", None) is not None:
        values["clustering"] = args.clustering
    if getattr(args, "distance", None) is not None:
        values["distance_metric"] = args.distance
    if "hidden_dims" in values:
        values["hidden_dims"] = tuple(values["hidden_dims"])
    try:
        config = RunConfig(**values)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return config


def _resolve_out(file_values: dict, args: argparse.Namespace) -> str:
    return args.out or file_values.get("out_dir") or "out"


def _scaled_hidden(dims: tuple[int, ...], scale: float) -> tuple[int, ...]:
    return tuple(max(1, int(round(h * (1.0 + scale)))) for h in dims)


def cmd_run(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    config = build_config(file_values, args)
    out_dir = _resolve_out(file_values, args)
    summary = run(config)
    stem = f"run_{config.mode}_seed{config.seed}"
    json_path, csv_path = write_summary(summary, out_dir, stem)
    print(f"mode={config.mode} seed={config.seed} "
          f"final_weighted_accuracy={summary.final_weighted_accuracy:.4f}"
          + (f" mean_ari={summary.mean_ari:.4f}"
             f" concept_matching_accuracy={summary.concept_matching_accuracy:.4f}"
             if config.mode == "cm" else ""))
    print(f"wrote {json_path}")
    print(f"wrote {csv_path}")
    return 0


def cmd_compare(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    base = build_config(file_values, args)
    out_dir = _resolve_out(file_values, args)
    cm = run(dataclasses.replace(base, mode="cm"))
    vanilla = run(dataclasses.replace(base, mode="vanilla"))
    write_summary(cm, out_dir, f"compare_cm_seed{base.seed}")
    write_summary(vanilla, out_dir, f"compare_vanilla_seed{base.seed}")
    os.makedirs(out_dir, exist_ok=True)
    side_path = os.path.join(out_dir, f"compare_seed{base.seed}.csv")
    write_text_atomic(compare_csv_text(cm, vanilla), side_path)
    gap = cm.final_weighted_accuracy - vanilla.final_weighted_accuracy
    print(f"cm={cm.final_weighted_accuracy:.4f} "
          f"vanilla={vanilla.final_weighted_accuracy:.4f} gap={gap:+.4f}")
    print(f"wrote {side_path}")
    return 0


def cmd_sweep(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    base = build_config(file_values, args)
    out_dir = _resolve_out(file_values, args)
    sweep = file_values.get("sweep", {})
    clients_axis = sweep.get("clients", [base.n_clients])
    scale_axis = sweep.get("model_scale", [0.0])
    k_axis = sweep.get("k_configured", [base.n_concepts_configured])
    written = []
    for n_clients, scale, k_conf in itertools.product(clients_axis, scale_axis, k_axis):
        config = dataclasses.replace(
            base, n_clients=n_clients, n_concepts_configured=k_conf,
            hidden_dims=_scaled_hidden(base.hidden_dims, scale))
        stem = f"sweep_clients{n_clients}_scale{scale:+g}_k{k_conf}_seed{config.seed}"
        summary = run(config)
        json_path, _ = write_summary(summary, out_dir, stem)
        written.append(json_path)
        line = (f"clients={n_clients} scale={scale:+g} k={k_conf} "
                f"final_weighted_accuracy={summary.final_weighted_accuracy:.4f}")
        if config.mode == "cm":
            line += f" concept_matching_accuracy={summary.concept_matching_accuracy:.4f}"
        print(line)
    print(f"wrote {len(written)} summaries to {out_dir}")
    return 0


def random_spd_instance(seed: int, max_dim: int = 20):
    """A seeded SPD quadratic with a step size inside the contraction regime."""
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, max_dim + 1))
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigvals = rng.uniform(0.1, 10.0, size=dim)
    a_matrix = q @ np.diag(eigvals) @ q.T
    a_matrix = (a_matrix + a_matrix.T) / 2
    offset = rng.normal(size=dim)
    w0 = offset + rng.normal(size=dim)
    lam_max = float(np.linalg.eigvalsh(a_matrix)[-1])
    eta = float(rng.uniform(0.05, 0.95)) / lam_max
    return a_matrix, offset, w0, eta


def cmd_verify_theorem(args) -> int:
    failures = 0
    print(f"{'trial':>5} {'dim':>4} {'eta':>12} {'result':>7}")
    for trial in range(args.trials):
        a_matrix, offset, w0, eta = random_spd_instance(args.seed + trial, args.max_dim)
        report = verify_descent_contraction(a_matrix, offset, w0, eta, args.steps)
        status = "pass" if report.passed else "FAIL"
        if not report.passed:
            failures += 1
        print(f"{trial:>5} {a_matrix.shape[0]:>4} {eta:>12.6g} {status:>7}")
    print(f"{args.trials - failures}/{args.trials} pass")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcm")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=("cm", "vanilla"))
        p.add_argument("--clustering", choices=("kmeans", "agglomerative", "dbscan"))
        p.add_argument("--distance", choices=("manhattan", "euclidean", "chebyshev"))
        p.add_argument("--out", help="output directory (default: out)")

    p_run = sub.add_parser("run", help="run one experiment")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run cm and vanilla on shared seeds")
    add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="Cartesian sweep over configured axes")
    add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_ver = sub.add_parser("verify-theorem",
                           help="check shrinking-step descent on SPD quadratics")
    p_ver.add_argument("--trials", type=int, default=50)
    p_ver.add_argument("--steps", type=int, default=100)
    p_ver.add_argument("--max-dim", type=int, default=20)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.set_defaults(func=cmd_verify_theorem)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
