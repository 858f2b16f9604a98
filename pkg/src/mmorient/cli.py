"""Command-line entry point: synthesis, training, evaluation, gradient
verification, and graph inspection.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure (non-finite
loss), 4 gradient-check failure. Numeric-heavy modules are imported after
``--threads`` is applied, so the cap reaches the BLAS thread pools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import DataError, NumericError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_floats(text, count, what):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != count:
        raise DataError(f"{what}: expected {count} comma-separated values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"{what}: {exc}") from exc


def _parse_sizes(text):
    try:
        sizes = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise DataError(f"bad layer sizes {text!r}") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise DataError(f"bad layer sizes {text!r}")
    return sizes


def _parse_tasks(text):
    from .dataio import TaskSpec

    specs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise DataError(f"bad task spec {part!r}, expected name:classes")
        name, _, count = part.partition(":")
        try:
            specs.append(TaskSpec(name.strip(), int(count)))
        except ValueError as exc:
            raise DataError(f"bad task spec {part!r}") from exc
    if not specs:
        raise DataError("no tasks given")
    return tuple(specs)


def _apply_threads(threads):
    if threads is None:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"config file {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise DataError(f"config file {path}: expected a JSON object")
    return cfg


def _resolve(args, defaults):
    """Flags beat the config file, which beats built-in defaults."""
    cfg = _load_config_file(getattr(args, "config", None))
    for key, builtin in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, builtin))
    return args


def _thresholds_from(args, fallback=None):
    from .cmrl import GraphThresholds

    if args.thresholds is not None:
        return GraphThresholds.from_tuple(
            _parse_floats(args.thresholds, 4, "--thresholds"))
    return fallback if fallback is not None else GraphThresholds()


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_synth(args):
    from .dataio import DEFAULT_TASKS, SynthConfig, generate_synthetic, write_bundle

    _resolve(args, {
        "n": 512, "separation": 4.0, "l_txt": 6, "l_img": 5,
        "token_width": 8, "region_width": 12, "joint_width": 8,
        "toxicity_width": 8,
    })
    tasks = _parse_tasks(args.tasks) if args.tasks else DEFAULT_TASKS
    config = SynthConfig(
        n=args.n, l_txt=args.l_txt, l_img=args.l_img,
        token_width=args.token_width, region_width=args.region_width,
        joint_width=args.joint_width, toxicity_width=args.toxicity_width,
        task_specs=tasks, cluster_separation=args.separation,
    )
    bundle = generate_synthetic(config, args.seed)
    write_bundle(bundle, args.out, force=args.force)
    print(f"dataset {args.out}")
    print(f"n {bundle.n}")
    print(f"dims joint={bundle.joint_txt.shape[1]} token={bundle.token_feats.shape[1]}x{bundle.token_feats.shape[2]} "
          f"region={bundle.region_feats.shape[1]}x{bundle.region_feats.shape[2]} toxicity={bundle.toxicity.shape[1]}")
    for t, spec in enumerate(bundle.task_specs):
        col = bundle.labels[:, t]
        hist = " ".join(f"{c}:{int((col == c).sum())}" for c in range(spec.class_count))
        print(f"task {spec.name} classes {spec.class_count} histogram {hist}")
    return EXIT_OK


def _train_config(args):
    from .learner import TrainConfig

    thresholds = _thresholds_from(args)
    try:
        return TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size,
            learning_rate=args.lr, momentum=args.momentum, seed=args.seed,
            beta=args.beta, channels=args.channels,
            mlp_sizes=_parse_sizes(args.mlp), thresholds=thresholds,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def cmd_train(args):
    from .dataio import atomic_write_bytes, load_bundle
    from .learner import history_lines, save_snapshot, train

    _resolve(args, {
        "epochs": 10, "batch_size": 128, "lr": 0.05, "momentum": 0.9,
        "beta": 200, "channels": 32, "mlp": "64,32",
    })
    config = _train_config(args)
    bundle = load_bundle(args.dataset)
    if args.grad_check:
        code = _grad_check_on(bundle, config, seed=config.seed)
        if code != EXIT_OK:
            return code
    params, history = train(bundle, config)
    if args.snapshot:
        save_snapshot(params, args.snapshot, config=config)
    if args.history:
        atomic_write_bytes(args.history, history_lines(history).encode("utf-8"))
    for rec in history:
        f1 = " ".join(f"{k}={v}" for k, v in rec["micro_f1"].items())
        print(f"epoch {rec['epoch']} loss {rec['loss']} micro_f1 {f1}")
    return EXIT_OK


def cmd_eval(args):
    from .dataio import atomic_write_bytes, load_bundle
    from .learner import evaluate, load_snapshot, validate_params_for_bundle
    from .taskfeat import task_feature_matrix

    bundle = load_bundle(args.dataset)
    params, meta = load_snapshot(args.snapshot)
    validate_params_for_bundle(params, bundle)
    thresholds = _thresholds_from(args, fallback=meta.get("thresholds"))
    batch_size = args.batch_size if args.batch_size is not None else meta.get("batch_size", 128)
    taskfeat = task_feature_matrix(bundle)
    report = evaluate(params, bundle, taskfeat, thresholds, batch_size)

    header = f"{'task':<16}{'n':>7}{'acc':>10}{'prec':>10}{'rec':>10}{'micro-f1':>10}{'macro-f1':>10}"
    print(header)
    lines = []
    for name, m in report.items():
        print(f"{name:<16}{m.n_evaluated:>7}{m.accuracy:>10.4f}{m.precision:>10.4f}"
              f"{m.recall:>10.4f}{m.micro_f1:>10.4f}{m.macro_f1:>10.4f}")
        lines.append(json.dumps({
            "task": name, "n": m.n_evaluated, "accuracy": m.accuracy,
            "precision": m.precision, "recall": m.recall,
            "micro_f1": m.micro_f1, "macro_f1": m.macro_f1,
        }, sort_keys=True, separators=(",", ":")))
    if args.out:
        atomic_write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    return EXIT_OK


def _grad_check_on(bundle, config, seed, eps=1e-5, coords=25):
    from .learner import run_grad_check

    reports = run_grad_check(bundle, config, eps=eps, coords_per_tensor=coords, seed=seed)
    worst = 0.0
    failed = 0
    for rep in reports:
        status = "PASS" if rep.max_rel_error <= GRADCHECK_TOLERANCE else "FAIL"
        failed += status == "FAIL"
        worst = max(worst, rep.max_rel_error)
        print(f"{status} {rep.name} max_rel_err {rep.max_rel_error:.3e}")
    print(f"checked {len(reports)} tensors, worst {worst:.3e}, tolerance {GRADCHECK_TOLERANCE:.0e}")
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_grad_check(args):
    from .dataio import DEFAULT_TASKS, SynthConfig, generate_synthetic, load_bundle
    from .learner import TrainConfig

    _resolve(args, {
        "batch_size": 4, "beta": 5, "channels": 8, "mlp": "16,8", "eps": 1e-5,
        "coords": 25,
    })
    thresholds = _thresholds_from(args)
    try:
        config = TrainConfig(
            epochs=1, batch_size=args.batch_size, seed=args.seed,
            beta=args.beta, channels=args.channels,
            mlp_sizes=_parse_sizes(args.mlp), thresholds=thresholds,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if args.dataset:
        bundle = load_bundle(args.dataset)
    else:
        # self-contained desk-scale fixture
        synth = SynthConfig(n=max(args.batch_size, 4), l_txt=6, l_img=5,
                            token_width=8, region_width=12, joint_width=8,
                            toxicity_width=8, task_specs=DEFAULT_TASKS,
                            cluster_separation=2.0)
        bundle = generate_synthetic(synth, args.seed)
    return _grad_check_on(bundle, config, seed=args.seed, eps=args.eps, coords=args.coords)


def cmd_build_graphs(args):
    from .cmrl import build_graphs
    from .dataio import atomic_write_bytes, load_bundle

    bundle = load_bundle(args.dataset)
    thresholds = _thresholds_from(args)
    graphs = build_graphs(bundle.joint_txt, bundle.joint_img, thresholds)
    lines = []
    for key, graph in graphs.items():
        lines.append(json.dumps({
            "graph": key,
            "threshold": graph.threshold,
            "nodes": graph.n,
            "edges": graph.edge_count(),
            "isolated": graph.isolated_count(),
            "degree_hist": {str(k): v for k, v in graph.degree_histogram().items()},
        }, sort_keys=True, separators=(",", ":")))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        atomic_write_bytes(args.out, text.encode("utf-8"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = _Parser(prog="mmorient", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config file; flags override it")

    p = sub.add_parser("gen-synth", help="write a labeled synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--l-txt", dest="l_txt", type=int, default=None)
    p.add_argument("--l-img", dest="l_img", type=int, default=None)
    p.add_argument("--token-width", dest="token_width", type=int, default=None)
    p.add_argument("--region-width", dest="region_width", type=int, default=None)
    p.add_argument("--joint-width", dest="joint_width", type=int, default=None)
    p.add_argument("--toxicity-width", dest="toxicity_width", type=int, default=None)
    p.add_argument("--tasks", default=None, help="name:classes,... (default 5-task suite)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train on a dataset bundle")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--snapshot", default=None)
    p.add_argument("--history", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--beta", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--mlp", default=None, help="hidden sizes, e.g. 64,32")
    p.add_argument("--thresholds", default=None, help="txt-txt,img-img,txt-img,img-txt")
    p.add_argument("--grad-check", dest="grad_check", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a snapshot on a dataset bundle")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--out", default=None, help="write per-task records here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    common(p)
    p.add_argument("--dataset", default=None, help="bundle to check on (default: built-in desk fixture)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--beta", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--mlp", default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--coords", type=int, default=None, help="coordinates sampled per tensor")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("build-graphs", help="report the four relation graphs of a bundle")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_build_graphs)

    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _apply_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
