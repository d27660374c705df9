"""Command-line interface.

Every command that writes files also writes a JSON sidecar recording the
fully resolved options. Passing that sidecar back through ``--config``
reruns the command with identical settings.

Config files are either such a JSON sidecar or an INI file::

    [general]
    seed = 3
    out = results

    [experiment-generalization]
    env = SC_HARD
    epochs = 200

Keys in ``[general]`` apply to every command; a command's own section
overrides them. Command-line flags override both.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .analysis import Subclass, bound_rho, bound_value, rho_chain_holds
from .core import LinearModel
from .datagen import (
    ENV_SETTING,
    GENERALIZATION_ENVS,
    gen_generalization_env,
    gen_varying_eps,
    ppe_synthetic_table,
    read_dataset_csv,
    write_dataset_csv,
)
from .experiments import (
    EpsilonSweepConfig,
    GeneralizationConfig,
    PPEConfig,
    aggregate_ppe,
    config_dict,
    run_epsilon_sweep,
    run_generalization,
    ppe_seed_configs,
    run_ppe,
    widest_ia_interval,
)
from .losses import StrategicLoss
from .response import Kind, ResponseSetting
from .solvers import NumericalFailure, OptimizerConfig, cross_validate, evaluate, train_soft

log = logging.getLogger("gsc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# option resolution


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


# name -> (type, default); None-typed options are passed through as strings
OPTIONS = {
    "gen-data": {"env": (str, "NL"), "seed": (int, 0), "epsilon": (float, 0.1), "out": (str, "data")},
    "train": {"env": (str, "NL"), "seed": (int, 0), "loss": (str, "s-hinge"), "lambda": (str, ""),
              "epochs": (int, 200), "batch": (int, 5), "data": (str, ""), "epsilon": (float, 0.1),
              "intercept": (bool, True), "out": (str, "model")},
    "eval": {"env": (str, "NL"), "seed": (int, 0), "model": (str, ""), "data": (str, ""),
             "epsilon": (float, 0.1), "out": (str, "")},
    "sweep-epsilon": {"seed": (int, 0), "n_seeds": (int, 10), "epsilon": (str, ""), "lambda": (str, ""),
                      "epochs": (int, 200), "batch": (int, 16), "out": (str, "results")},
    "experiment-generalization": {"env": (str, "ALL"), "seed": (int, 0), "n_seeds": (int, 30),
                                  "lambda": (str, ""), "epochs": (int, 200), "batch": (int, 5),
                                  "threads": (int, 1), "out": (str, "results")},
    "experiment-ppe": {"seed": (int, 0), "n_seeds": (int, 5), "synthetic": (bool, False), "data": (str, ""),
                       "lambda": (str, ""), "epochs": (int, 50), "batch": (int, 24),
                       "rating_threshold": (str, ""), "threads": (int, 1), "out": (str, "results")},
    "bound": {"r": (float, 5.0), "m": (int, 1000), "delta": (float, 0.05), "w_norm": (float, 1.0),
              "loss": (float, 0.0), "epsilon": (float, 0.5), "out": (str, "")},
}


def _coerce(kind, value):
    if kind is bool:
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value {value!r}: {exc}") from None


def load_config(path: str, command: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            side = json.load(fh)
        if side.get("command") not in (None, command):
            raise UsageError(f"sidecar was written by {side.get('command')!r}, not {command!r}")
        return dict(side.get("options", {}))
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    out = {}
    for section in ("general", command):
        if parser.has_section(section):
            out.update({k.replace("-", "_"): v for k, v in parser.items(section)})
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    """CLI flag > config file > built-in default."""
    spec = OPTIONS[command]
    cfg = load_config(args.config, command) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(spec)
    if unknown:
        log.warning("ignoring unknown config keys for %s: %s", command, ", ".join(sorted(unknown)))
    out = {}
    for name, (kind, default) in spec.items():
        cli = getattr(args, name, None)
        if cli is not None:
            out[name] = _coerce(kind, cli)
        elif name in cfg:
            out[name] = _coerce(kind, cfg[name])
        else:
            out[name] = default
    return out


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def write_csv(path: str, rows: list, header: list = None) -> None:
    header = header or list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def write_sidecar(path: str, command: str, options: dict, outputs: list, extra: dict = None) -> None:
    side = {
        "command": command,
        "options": options,
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        side.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory is not writable: {path}")
    return path


def _env(name: str) -> str:
    env = name.upper()
    if env not in GENERALIZATION_ENVS and env not in ("EPS", "PPE"):
        raise UsageError(f"unknown environment {name!r}; expected NL, ADV, SC, SC_HARD, EPS or PPE")
    return env


def _setting_for(env: str) -> ResponseSetting:
    return ResponseSetting(Kind(ENV_SETTING.get(env, "NL")))


def _datasets(env: str, seed: int, epsilon: float, data_dir: str = ""):
    if data_dir:
        train = read_dataset_csv(os.path.join(data_dir, "train.csv"))
        test_path = os.path.join(data_dir, "test.csv")
        return train, read_dataset_csv(test_path) if os.path.exists(test_path) else None
    if env == "EPS":
        return gen_varying_eps(seed, epsilon)
    if env == "PPE":
        raise UsageError("use experiment-ppe for the PPE setting")
    return gen_generalization_env(env, seed)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(o: dict) -> int:
    env = _env(o["env"])
    out = _outdir(o["out"])
    files = []
    if env == "PPE":
        table = ppe_synthetic_table(o["seed"])
        for name, ids, feats in (("users.csv", "user_id", table.users), ("items.csv", "item_id", table.items)):
            path = os.path.join(out, name)
            rows = [{ids: i, **{f"f{j}": v for j, v in enumerate(row)}} for i, row in enumerate(feats)]
            write_csv(path, rows)
            files.append(path)
        path = os.path.join(out, "ratings.csv")
        write_csv(path, [{"user_id": int(u), "item_id": int(i), "rating": 5 if lab > 0 else 1}
                         for u, i, lab in zip(table.rating_user, table.rating_item, table.label)])
        files.append(path)
        meta = table.meta
    else:
        train, test = _datasets(env, o["seed"], o["epsilon"])
        for name, ds in (("train.csv", train), ("test.csv", test)):
            path = os.path.join(out, name)
            write_dataset_csv(ds, path)
            files.append(path)
        meta = {"train": train.meta, "test": test.meta}
    write_sidecar(os.path.join(out, "gen-data.json"), "gen-data", o, files, {"generator": meta})
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def _loss(name: str) -> StrategicLoss:
    aliases = {"s-hinge": StrategicLoss.S_HINGE, "naive": StrategicLoss.NAIVE_HINGE, "hinge": StrategicLoss.STANDARD_HINGE}
    if name not in aliases:
        raise UsageError(f"unknown loss {name!r}; expected one of {sorted(aliases)}")
    return aliases[name]


def cmd_train(o: dict) -> int:
    env = _env(o["env"])
    setting = _setting_for(env)
    loss = _loss(o["loss"])
    train, _ = _datasets(env, o["seed"], o["epsilon"], o["data"])
    opt = OptimizerConfig(epochs=o["epochs"], batch_size=o["batch"], seed=o["seed"])
    train_setting = setting if loss is not StrategicLoss.STANDARD_HINGE else None

    def fit(ds, lam):
        return train_soft(loss, ds, lam, opt, setting=train_setting, fit_intercept=o["intercept"]).model

    if o["lambda"]:
        lam = _floats(o["lambda"])[0]
    else:
        lam = cross_validate(fit, train, setting=setting, seed=o["seed"])
    result = train_soft(loss, train, lam, opt, setting=train_setting, fit_intercept=o["intercept"])
    out = _outdir(o["out"])
    path = os.path.join(out, "model.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"w": result.model.w.tolist(), "b": result.model.b, "lambda": lam, "env": env,
                   "loss": o["loss"], "final_objective": result.final_objective}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_sidecar(os.path.join(out, "train.json"), "train", o, [path])
    print(f"lambda={lam:g} objective={result.final_objective:.6f} -> {path}")
    return EXIT_OK


def cmd_eval(o: dict) -> int:
    if not o["model"]:
        raise UsageError("--model is required")
    try:
        with open(o["model"], encoding="utf-8") as fh:
            spec = json.load(fh)
        model = LinearModel(spec["w"], spec.get("b", 0.0))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read model {o['model']!r}: {exc}") from None
    env = _env(o["env"] if o["env"] else spec.get("env", "NL"))
    _, test = _datasets(env, o["seed"], o["epsilon"], o["data"])
    if test is None:
        raise ValueError("no test.csv found in the data directory")
    report = evaluate(_setting_for(env), model, test)
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    print(text)
    if o["out"]:
        out = _outdir(o["out"])
        path = os.path.join(out, "eval.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        write_sidecar(os.path.join(out, "eval.sidecar.json"), "eval", o, [path])
    return EXIT_OK


def _maybe_lambdas(text, default):
    return tuple(_floats(text)) if text else default


def cmd_sweep_epsilon(o: dict) -> int:
    from .plots import plot_epsilon

    cfg = EpsilonSweepConfig(seed=o["seed"], n_seeds=o["n_seeds"], epochs=o["epochs"], batch_size=o["batch"])
    if o["epsilon"]:
        cfg.epsilons = tuple(_floats(o["epsilon"]))
    if any(not 0 <= e <= 0.5 for e in cfg.epsilons):
        raise UsageError("epsilon grid must lie within [0, 0.5]")
    cfg.lambdas = _maybe_lambdas(o["lambda"], cfg.lambdas)
    rows = run_epsilon_sweep(cfg)
    out = _outdir(o["out"])
    path = os.path.join(out, "epsilon_sweep.csv")
    write_csv(path, rows)
    svg = os.path.join(out, "epsilon_sweep.svg")
    plot_epsilon(path, svg)
    width = widest_ia_interval(rows)
    write_sidecar(os.path.join(out, "epsilon_sweep.json"), "sweep-epsilon", o, [path, svg],
                  {"resolved_config": config_dict(cfg), "widest_ia_interval": width,
                   "note": "non-strategic optimum approximated by trained hinge model and 2D angle search"})
    for r in rows:
        print(f"eps={r['epsilon']:.2f} strategic={r['strategic_acc']:.4f} baseline={r['baseline_acc']:.4f} {r['region']}")
    print(f"widest IA interval: {width:.2f}")
    return EXIT_OK


def _generalization_one(cfg: GeneralizationConfig):
    return run_generalization(cfg)


def cmd_experiment_generalization(o: dict) -> int:
    from .plots import plot_generalization

    envs = sorted(GENERALIZATION_ENVS) if o["env"].upper() == "ALL" else [_env(o["env"])]
    if any(e not in GENERALIZATION_ENVS for e in envs):
        raise UsageError("experiment-generalization needs env NL, ADV, SC, SC_HARD or ALL")
    out = _outdir(o["out"])
    cfgs = []
    for env in envs:
        cfg = GeneralizationConfig(env=env, seed=o["seed"], n_seeds=o["n_seeds"], epochs=o["epochs"],
                                   batch_size=o["batch"])
        cfg.lambdas = _maybe_lambdas(o["lambda"], cfg.lambdas)
        cfgs.append(cfg)
    if o["threads"] > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=o["threads"]) as pool:
            results = list(pool.map(_generalization_one, cfgs))
    else:
        results = [_generalization_one(c) for c in cfgs]
    for cfg, (rows, per_seed) in zip(cfgs, results):
        stem = os.path.join(out, f"generalization_{cfg.env}")
        write_csv(stem + ".csv", rows, ["fraction", "method", "mean_acc", "se_low", "se_high", "n_seeds"])
        write_csv(stem + "_seeds.csv", per_seed)
        plot_generalization(stem + ".csv", stem + ".svg", cfg.env)
        opts = dict(o, env=cfg.env)
        write_sidecar(stem + ".json", "experiment-generalization", opts,
                      [stem + ".csv", stem + "_seeds.csv", stem + ".svg"],
                      {"resolved_config": config_dict(cfg),
                       "error_bars": "16th/84th percentile deviations of per-seed accuracy divided by sqrt(n_seeds)"})
        final = {r["method"]: r["mean_acc"] for r in rows if r["fraction"] == cfg.fractions[-1]}
        print(cfg.env, " ".join(f"{k}={v:.4f}" for k, v in final.items()))
    return EXIT_OK


def cmd_experiment_ppe(o: dict) -> int:
    from .plots import plot_ppe

    if not o["synthetic"] and not o["data"]:
        raise ValueError("no coats data directory given; pass --data DIR or --synthetic")
    if o["data"] and not o["synthetic"]:
        for name in ("users.csv", "items.csv", "ratings.csv"):
            if not os.path.exists(os.path.join(o["data"], name)):
                raise ValueError(f"missing {name} in {o['data']}")
    out = _outdir(o["out"])
    base = PPEConfig(epochs=o["epochs"], batch_size=o["batch"], synthetic=o["synthetic"], data_path=o["data"])
    base.lambdas = _maybe_lambdas(o["lambda"], base.lambdas)
    if o["rating_threshold"]:
        base.rating_threshold = float(o["rating_threshold"])
    base.seed = o["seed"]
    cfgs = ppe_seed_configs(base, o["n_seeds"])
    if o["threads"] > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=o["threads"]) as pool:
            per_seed = list(pool.map(run_ppe, cfgs))
    else:
        per_seed = [run_ppe(c) for c in cfgs]
    rows = aggregate_ppe(per_seed)
    path = os.path.join(out, "ppe.csv")
    write_csv(path, rows)
    seed_rows = [dict(r, seed=c.seed) for c, rs in zip(cfgs, per_seed) for r in rs]
    write_csv(os.path.join(out, "ppe_seeds.csv"), seed_rows)
    svg = os.path.join(out, "ppe.svg")
    plot_ppe(path, svg)
    write_sidecar(os.path.join(out, "ppe.json"), "experiment-ppe", o,
                  [path, svg, os.path.join(out, "ppe_seeds.csv")],
                  {"resolved_config": config_dict(base), "seeds": [c.seed for c in cfgs]})
    for r in rows:
        print(f"n={r['history_size']:2d} {r['user_loss']:8s} gs-hinge={r['gs_hinge_acc']:.4f} "
              f"hinge={r['hinge_acc']:.4f} gain={100 * r['gain']:+.2f} pts")
    return EXIT_OK


def cmd_bound(o: dict) -> int:
    r, eps = o["r"], o["epsilon"]
    if r < 0 or not 0 <= eps <= 1 or o["m"] < 1 or not 0 < o["delta"] < 1 or o["w_norm"] < 0:
        raise UsageError("need r >= 0, 0 <= epsilon <= 1, m >= 1, 0 < delta < 1, w_norm >= 0")
    rows = []
    for sub in Subclass:
        rho = bound_rho(sub, r, eps if sub is Subclass.NL else None)
        val = bound_value(sub, o["loss"], o["w_norm"], r, o["m"], o["delta"], eps if sub is Subclass.NL else None)
        rows.append({"subclass": sub.value, "rho": rho, "bound": val})
    print(f"r={r:g} m={o['m']} delta={o['delta']:g} w_norm={o['w_norm']:g} empirical_loss={o['loss']:g} epsilon={eps:g}")
    print(f"{'subclass':8s} {'rho':>10s} {'bound':>12s}")
    print(f"{'standard':8s} {r:10.4f} {'':>12s}")
    for row in rows:
        print(f"{row['subclass']:8s} {row['rho']:10.4f} {row['bound']:12.6f}")
    ok = r >= 2 and rho_chain_holds(r, eps)
    print("ordering chain:", "holds" if ok else ("VIOLATED" if r >= 2 else "not applicable (r < 2)"))
    if o["out"]:
        out = _outdir(o["out"])
        path = os.path.join(out, "bound.csv")
        write_csv(path, rows)
        write_sidecar(os.path.join(out, "bound.json"), "bound", o, [path])
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-epsilon": cmd_sweep_epsilon,
    "experiment-generalization": cmd_experiment_generalization,
    "experiment-ppe": cmd_experiment_ppe,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gsc", description="Strategic classification with user side information.")
    p.add_argument("--version", action="version", version=f"gsc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "gen-data": "generate a synthetic dataset (CSV per split)",
        "train": "train a linear model on a synthetic environment",
        "eval": "evaluate a saved model (strategic and raw accuracy)",
        "sweep-epsilon": "noise-rate sweep with incentive-alignment classification",
        "experiment-generalization": "accuracy vs training-set size on the synthetic environments",
        "experiment-ppe": "gs-hinge vs hinge for bilinear models with private user histories",
        "bound": "print effective radii and generalization-bound values",
    }
    for name, spec in OPTIONS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", help="INI config file or a JSON sidecar from a previous run")
        for opt, (kind, default) in spec.items():
            flag = "--" + opt.replace("_", "-")
            if kind is bool:
                sp.add_argument(flag, dest=opt, action="store_const", const=True, default=None,
                                help=f"(default: {default})")
                sp.add_argument("--no-" + opt.replace("_", "-"), dest=opt, action="store_const", const=False)
            else:
                sp.add_argument(flag, dest=opt, type=kind, default=None, help=f"(default: {default!r})")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        options = resolve(args.command, args)
        return COMMANDS[args.command](options)
    except UsageError as exc:
        print(f"gsc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gsc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"gsc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
