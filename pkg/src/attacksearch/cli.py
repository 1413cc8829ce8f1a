"""Command-line front end.

Subcommands: gen-data, train-victim, search, eval-attack, restart-ablation,
rank-check.  Every option may also come from an INI file passed with
``--config``: keys of the ``[common]`` section and of the section named after
the subcommand (dashes or underscores) act as defaults, explicit flags win.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure.
Every JSON output carries a ``meta`` block with the master seed, a hash of
the resolved configuration and the package version; CSV outputs carry the
same information in a leading ``#`` comment line.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .diffmodel import TrainConfig, TrainingDivergedError, accuracy, make_desk_dataset, train_adversarial, train_standard
from .evaluator import Evaluator, outcomes_to_csv, rank_fidelity, restart_ablation
from .model_io import load_dataset, load_model, model_fingerprint, save_dataset, save_model
from .search import SearchConfig, fast_nondominated_sort, memetic_search
from .sequence import DEFAULT_EPS_MAX, ExecutionOptions, SearchSpace, parse_listing, sequence_from_json

logger = logging.getLogger("attacksearch")

# options that only name files; they do not enter the configuration hash
_PATH_KEYS = {"config", "out", "data", "train", "test", "model", "attack", "command", "func", "verbose"}


class UsageError(Exception):
    """Bad arguments or input files; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers


def config_hash(args: argparse.Namespace) -> str:
    d = {k: v for k, v in sorted(vars(args).items()) if k not in _PATH_KEYS}
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def meta(args: argparse.Namespace, **extra) -> dict:
    return {"seed": args.seed, "config_hash": config_hash(args), "version": __version__,
            "command": args.command, **extra}


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, text: str, args) -> None:
    m = meta(args)
    head = f"# seed={m['seed']} config_hash={m['config_hash']} version={m['version']}\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(head + text)


def _space(args) -> SearchSpace:
    eps = args.eps_max if args.eps_max is not None else DEFAULT_EPS_MAX[args.norm]
    try:
        return SearchSpace(args.norm, eps, max_iters=args.max_iters, max_cells=args.max_cells)
    except ValueError as exc:
        raise UsageError(f"invalid search space: {exc}") from exc


def _options(args) -> ExecutionOptions:
    return ExecutionOptions(seed=args.seed, init=args.init)


def _load_attack(path: Path, space: SearchSpace | None):
    text = path.read_text()
    try:
        seq = sequence_from_json(text)
    except (json.JSONDecodeError, KeyError, TypeError):
        if space is None:
            raise UsageError(f"{path}: plain A/L/M/I/R listings need --norm")
        seq = parse_listing(text, space)
    if space is not None and (seq.norm != space.norm or seq.eps_max != space.eps_max):
        raise UsageError(
            f"attack uses {seq.norm} with eps_max={seq.eps_max}, requested {space.norm} with eps_max={space.eps_max}"
        )
    return seq


def _load_inputs(args):
    if not Path(args.model).exists():
        raise UsageError(f"model file {args.model} does not exist")
    if not Path(args.data).exists():
        raise UsageError(f"dataset file {args.data} does not exist")
    return load_model(args.model), load_dataset(args.data)


def _outcome_dict(o) -> dict:
    return {"robust_accuracy": o.robust_accuracy, "n_correct": o.n_correct, "n_total": o.n_total,
            "cost_units": o.cost_units, "evaluator": o.evaluator}


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    train, test = make_desk_dataset(args.n_train, args.n_test, args.classes, args.side, args.noise,
                                    args.contrast, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = meta(args)
    save_dataset(train, out / "train.bin", {"meta": m})
    save_dataset(test, out / "test.bin", {"meta": m})
    write_json(out / "metadata.json", {
        "meta": m,
        "n_train": args.n_train, "n_test": args.n_test, "n_classes": args.classes,
        "dim": args.side * args.side, "noise": args.noise, "contrast": args.contrast,
    })
    print(f"wrote {out / 'train.bin'} and {out / 'test.bin'}")
    return 0


def cmd_train_victim(args) -> int:
    for p in (args.train, args.test):
        if not Path(p).exists():
            raise UsageError(f"dataset file {p} does not exist")
    train, test = load_dataset(args.train), load_dataset(args.test)
    adversarial = args.defense == "pgd-at"
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
                      hidden=tuple(args.hidden), activation=args.activation, adversarial=adversarial,
                      at_steps=args.at_steps, at_epsilon=args.at_epsilon, at_norm=args.norm)
    model = train_adversarial(train, cfg) if adversarial else train_standard(train, cfg)
    report = {"meta": meta(args), "defense": args.defense, "clean_accuracy": accuracy(model, test),
              "train_accuracy": accuracy(model, train), "fingerprint": model_fingerprint(model),
              "dims": model.dims}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out, {"meta": report["meta"], "defense": args.defense})
    write_json(out.with_suffix(".report.json"), report)
    print(f"clean accuracy {report['clean_accuracy']:.4f}; wrote {out}")
    return 0


def cmd_search(args) -> int:
    model, data = _load_inputs(args)
    space = _space(args)
    preset = SearchConfig.desk if args.preset == "desk" else SearchConfig.full
    overrides = {k: getattr(args, k) for k in ("population", "generations", "crossover_rate", "mutation_rate",
                                               "local_iterations", "final_candidates", "rough_size")
                 if getattr(args, k) is not None}
    try:
        cfg = preset(seed=args.seed, selection=args.selection, max_magnitude_init=args.init_magnitude == "max",
                     **overrides)
    except ValueError as exc:
        raise UsageError(f"invalid search config: {exc}") from exc
    if cfg.rough_size > len(data):
        raise UsageError(f"rough_size {cfg.rough_size} exceeds dataset size {len(data)}")
    if args.show_config:
        print(json.dumps({"space": space.to_dict(), "search": cfg.__dict__}, indent=2, sort_keys=True))

    result = memetic_search(space, cfg, model, data, _options(args))
    m = meta(args, model=model_fingerprint(model), rough_subset=list(result.rough_subset.indices),
             rough_split=data.split)
    out = Path(args.out)
    pareto = []
    for phase in ("rough", "accurate"):
        entries = [e for e in result.archive if e.outcome.evaluator == phase]
        fronts = fast_nondominated_sort([e.outcome.objectives for e in entries]) if entries else []
        rank = {i: r for r, f in enumerate(fronts, start=1) for i in f}
        pareto += [e.to_dict(space, rank[i]) for i, e in enumerate(entries)]
    write_json(out / "pareto.json", {"meta": m, "space": space.to_dict(), "search": cfg.__dict__,
                                     "archive": pareto})
    front_rows = [p for p in pareto if p["front"] == 1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["evaluator", "robust_accuracy", "cost_units", "generation", "design_vector"])
    for p in sorted(front_rows, key=lambda p: (p["evaluator"], p["robust_accuracy"], p["cost_units"])):
        w.writerow([p["evaluator"], repr(p["robust_accuracy"]), p["cost_units"], p["generation"],
                    " ".join(map(str, p["design_vector"]))])
    write_csv(out / "pareto.csv", buf.getvalue(), args)
    write_json(out / "final_attack.json", {"meta": m, **result.sequence.to_dict(),
                                           "outcome": _outcome_dict(result.outcome)})
    write_json(out / "run_log.json", {"meta": m, "log": result.log,
                                      "phase2_candidates": [{"design_vector": list(v), **_outcome_dict(o)}
                                                            for v, o in result.phase2_candidates]})
    print(result.sequence.listing())
    print(f"robust accuracy {result.outcome.robust_accuracy:.4f}, cost {result.outcome.cost_units}")
    return 0


def cmd_eval_attack(args) -> int:
    model, data = _load_inputs(args)
    space = _space(args) if args.norm else None
    seq = _load_attack(Path(args.attack), space)
    outcome = Evaluator.accurate(model, data, _options(args)).evaluate(seq)
    report = {"meta": meta(args, model=model_fingerprint(model)), "attack": seq.to_dict(),
              **_outcome_dict(outcome)}
    out = Path(args.out)
    write_json(out.with_suffix(".json"), report)
    write_csv(out.with_suffix(".csv"), outcomes_to_csv([(Path(args.attack).stem, outcome)]), args)
    print(f"robust accuracy {outcome.robust_accuracy:.4f}, cost {outcome.cost_units}")
    return 0


def cmd_restart_ablation(args) -> int:
    model, data = _load_inputs(args)
    space = _space(args) if args.norm else None
    seq = _load_attack(Path(args.attack), space)
    rows = restart_ablation(seq, Evaluator.accurate(model, data, _options(args)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["restarts", "robust_accuracy", "n_correct", "cost_units"])
    for cfg, o in rows:
        w.writerow(["[" + ",".join(map(str, cfg)) + "]", repr(o.robust_accuracy), o.n_correct, o.cost_units])
    write_csv(Path(args.out), buf.getvalue(), args)
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_rank_check(args) -> int:
    model, data = _load_inputs(args)
    space = _space(args)
    reports = [rank_fidelity(model, data, space, args.n_attacks, args.rough_size, s,
                             ExecutionOptions(seed=s, init=args.init))
               for s in range(args.seed, args.seed + args.n_seeds)]
    keys = ("tau_ra_loss_sorted", "tau_ra_random", "tau_cost_loss_sorted", "tau_cost_random")
    per_seed = [r.to_dict() for r in reports]
    mean = {k: sum(r[k] for r in per_seed) / len(per_seed) for k in keys}
    write_json(Path(args.out), {"meta": meta(args, model=model_fingerprint(model)), "mean": mean,
                                "per_seed": per_seed})
    for k in keys:
        print(f"{k}: {mean[k]:.4f}")
    return 0


# ------------------------------------------------------------------ parser


def _space_args(p, norm_required=True) -> None:
    p.add_argument("--norm", choices=("linf", "l2"), default="linf" if norm_required else None)
    p.add_argument("--eps-max", type=float, default=None, help="default 0.031 (linf) or 0.5 (l2)")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--max-cells", type=int, default=4)


def _eval_args(p) -> None:
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="evaluation dataset file")
    p.add_argument("--init", choices=("random", "original"), default="random",
                   help="starting point of iterative operators")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attacksearch", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with option defaults")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic desk dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--side", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--contrast", type=float, default=0.12)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-victim", parents=[common], help="train a standard or PGD-AT victim")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--defense", choices=("none", "pgd-at"), default="none")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    p.add_argument("--activation", choices=("tanh", "softplus", "relu"), default="tanh")
    p.add_argument("--norm", choices=("linf", "l2"), default="linf")
    p.add_argument("--at-steps", type=int, default=7)
    p.add_argument("--at-epsilon", type=float, default=0.031)
    p.set_defaults(func=cmd_train_victim)

    p = sub.add_parser("search", parents=[common], help="run the memetic attack search")
    _eval_args(p)
    _space_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=("desk", "full"), default="desk",
                   help="desk: population 16, 10 generations; full: population 40, 20 generations")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--crossover-rate", type=float)
    p.add_argument("--mutation-rate", type=float)
    p.add_argument("--local-iterations", type=int)
    p.add_argument("--final-candidates", type=int)
    p.add_argument("--rough-size", type=int)
    p.add_argument("--selection", choices=("loss_sorted", "random"), default="loss_sorted")
    p.add_argument("--init-magnitude", choices=("max", "random"), default="max")
    p.add_argument("--show-config", action="store_true", help="print the resolved configuration")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval-attack", parents=[common], help="evaluate a saved attack on a model")
    _eval_args(p)
    _space_args(p, norm_required=False)
    p.add_argument("--attack", required=True)
    p.add_argument("--out", required=True, help="report path; .json and .csv are written")
    p.set_defaults(func=cmd_eval_attack)

    p = sub.add_parser("restart-ablation", parents=[common], help="evaluate every restart configuration")
    _eval_args(p)
    _space_args(p, norm_required=False)
    p.add_argument("--attack", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_restart_ablation)

    p = sub.add_parser("rank-check", parents=[common], help="rough vs accurate ranking fidelity")
    _eval_args(p)
    _space_args(p)
    p.add_argument("--out", required=True, help="JSON path")
    p.add_argument("--n-attacks", type=int, default=20)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--rough-size", type=int, default=36)
    p.set_defaults(func=cmd_rank_check)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    ini = configparser.ConfigParser()
    if not ini.read(known.config):
        raise UsageError(f"cannot read config file {known.config}")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    target = sub.choices.get(known.command)
    if target is None:
        return
    values = {}
    for section in ("common", known.command, known.command.replace("-", "_")):
        if ini.has_section(section):
            values.update(ini.items(section))
    actions = {a.dest: a for a in target._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"unknown option {key!r} in config file")
        act = actions[dest]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[dest] = ini.BOOLEAN_STATES.get(raw.lower(), False)
        elif act.nargs in ("+", "*"):
            defaults[dest] = [act.type(x) if act.type else x for x in raw.split()]
        else:
            defaults[dest] = act.type(raw) if act.type else raw
        if act.choices is not None and defaults[dest] not in act.choices:
            raise UsageError(f"config value {raw!r} for {key} not in {sorted(act.choices)}")
        act.required = False
    target.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
