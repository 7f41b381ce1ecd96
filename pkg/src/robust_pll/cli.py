"""Experiment orchestration CLI.

Subcommands: gen-noise, train, eval, attack, ood, report.  Options can
come from a flat `key = value` config file (--config) with command-line
flags taking precedence.  Reports are tab-separated `section key value`
records embedding the effective-config hash and seed list, so identical
configurations produce byte-identical outputs.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 training failure.
"""

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import core, data, evaluate, nn
from .errors import ConfigError, DataError, FormatError, RobustPllError, TrainingError

METHODS = {
    "robust-pll-mse": "mse",
    "robust-pll-ce": "ce",
    "proden-baseline": "proden",
}

_CONFIG_KEYS = {
    "method": str,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "ensemble": int,
    "repetitions": int,
    "hidden": str,
    "eps_list": str,
    "attack_steps": int,
    "probe_epochs": int,
    "train": str,
    "test": str,
    "ood": str,
}


def read_config_file(path):
    values = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](val)
        except ValueError:
            raise ConfigError(f"{path}:{ln}: bad value for {key!r}") from None
    return values


def _parse_hidden(text):
    try:
        dims = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad hidden layer list {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"bad hidden layer list {text!r}")
    return dims


def _parse_eps(text):
    try:
        eps = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad epsilon list {text!r}") from None
    if any(e < 0 for e in eps):
        raise ConfigError("epsilon values must be non-negative")
    return eps


def _merge_options(args, defaults):
    """File values under CLI values under defaults."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in defaults:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            merged[key] = flag
    return merged


def config_hash(options):
    canon = "\n".join(f"{k} = {options[k]}" for k in sorted(options))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _fmt(value):
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_report(path, sections):
    """`sections` is a list of (section, key, value) records."""
    with open(path, "w") as fh:
        for section, key, value in sections:
            fh.write(f"{section}\t{key}\t{_fmt(value)}\n")


def read_report(path):
    rows = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{ln}: expected 3 tab-separated fields")
        rows.append(tuple(parts))
    return rows


def _print_table(rows):
    if not rows:
        return
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def _load_predictor(paths):
    members = [nn.load_model(p) for p in paths]
    if len(members) == 1:
        return members[0]
    return evaluate.Ensemble(members)


def _require_labels(dataset, path):
    if dataset.true_labels is None:
        raise DataError(f"{path}: dataset has no labels; cannot evaluate")


def cmd_gen_noise(args):
    defaults = {"seed": 0, "probe_epochs": 20}
    opts = _merge_options(args, defaults)
    if args.images:
        if not args.idx_labels:
            raise ConfigError("--images requires --idx-labels")
        features, labels = data.read_idx(args.images, args.idx_labels)
    elif args.input:
        src = data.read_pll_file(args.input)
        _require_labels(src, args.input)
        features, labels = src.features, src.true_labels
    else:
        raise ConfigError("gen-noise needs --images/--idx-labels or --input")
    hidden = _parse_hidden(args.probe_hidden) if args.probe_hidden else core.DEFAULT_HIDDEN
    cfg = data.NoiseConfig(
        seed=opts["seed"], probe_hidden=hidden, probe_epochs=opts["probe_epochs"]
    )
    dataset = data.generate_candidates(features, labels, cfg)
    data.write_pll_file(dataset, args.out)
    avg = dataset.candidates.sum(axis=1).mean()
    print(f"instances\t{dataset.n}")
    print(f"classes\t{dataset.k}")
    print(f"avg_candidates\t{_fmt(float(avg))}")
    return 0


_TRAIN_DEFAULTS = {
    "method": "robust-pll-mse",
    "epochs": 50,
    "batch_size": 256,
    "learning_rate": 1e-3,
    "seed": 0,
    "ensemble": 1,
    "repetitions": 1,
    "hidden": "300,300,300",
}


def cmd_train(args):
    opts = _merge_options(args, dict(_TRAIN_DEFAULTS, train=""))
    train_path = args.data or opts.get("train")
    if not train_path:
        raise ConfigError("train needs --data (or `train` in the config file)")
    if opts["method"] not in METHODS:
        raise ConfigError(f"unknown method {opts['method']!r}; choose from {sorted(METHODS)}")
    if opts["ensemble"] < 1:
        raise ConfigError("ensemble size must be >= 1")
    if opts["repetitions"] < 1:
        raise ConfigError("repetitions must be >= 1")
    dataset = data.read_pll_file(train_path)
    out_dir = Path(args.out_dir)
    hidden = _parse_hidden(opts["hidden"])
    for rep in range(opts["repetitions"]):
        # decorrelated, reproducible seeds: one block of 1000 per repetition
        rep_seed = opts["seed"] + 1000 * rep
        rep_dir = out_dir / f"rep_{rep:02d}" if opts["repetitions"] > 1 else out_dir
        rep_dir.mkdir(parents=True, exist_ok=True)
        for member in range(opts["ensemble"]):
            cfg = core.TrainConfig(
                epochs=opts["epochs"],
                batch_size=opts["batch_size"],
                learning_rate=opts["learning_rate"],
                seed=rep_seed + member,
                update_rule=METHODS[opts["method"]],
                hidden_dims=hidden,
            )
            result = core.train(dataset, cfg)
            nn.save_model(result.model, rep_dir / f"member_{member:02d}.model")
            core.write_trace(result.trace, rep_dir / f"member_{member:02d}.trace.tsv")
            final = result.trace[-1]
            print(
                f"rep {rep} member {member}: seed {cfg.seed}, "
                f"risk {final.mean_err + final.mean_var:.6f}, "
                f"agreement {final.weight_agreement:.4f}"
            )
    return 0


_EVAL_DEFAULTS = {
    "seed": 0,
    "ensemble": 1,
    "eps_list": "",
    "attack_steps": 10,
    "method": "",
}


def _meta_rows(opts, n_members=None):
    members = n_members if n_members is not None else opts.get("ensemble", 1)
    seeds = [opts["seed"] + i for i in range(members)]
    return [
        ("meta", "config_hash", config_hash(opts)),
        ("meta", "seeds", ",".join(str(s) for s in seeds)),
    ]


def cmd_eval(args):
    opts = _merge_options(args, dict(_EVAL_DEFAULTS, test="", ood=""))
    test_path = args.test or opts.get("test")
    if not test_path:
        raise ConfigError("eval needs --test")
    test = data.read_pll_file(test_path)
    _require_labels(test, test_path)
    predictor = _load_predictor(args.checkpoints)

    rows = _meta_rows(opts, len(args.checkpoints))
    acc = evaluate.accuracy(predictor, test.features, test.true_labels)
    ent_test = evaluate.entropy_samples(predictor, test.features)
    rows.append(("accuracy", "clean", acc))
    rows.append(("entropy", "test_mean", float(ent_test.mean())))

    ood_path = args.ood or opts.get("ood")
    if ood_path:
        ood_set = data.read_pll_file(ood_path)
        ent_ood = evaluate.entropy_samples(predictor, ood_set.features)
        report = evaluate.ood_report(ent_test, ent_ood, seed=opts["seed"])
        rows.append(("entropy", "ood_mean", float(ent_ood.mean())))
        rows.append(("ood", "cdf_area", report.cdf_area))
        rows.append(("ood", "ks_stat", report.ks_stat))
        rows.append(("ood", "mmd", report.mmd))

    eps = _parse_eps(opts["eps_list"]) if opts["eps_list"] else ()
    if eps:
        sweep = evaluate.attack_sweep(
            predictor, test.features, test.true_labels, eps, steps=opts["attack_steps"]
        )
        rows.extend(("attack", _fmt(e), a) for e, a in sweep)

    write_report(args.out, rows)
    _print_table(rows)
    return 0


def cmd_attack(args):
    opts = _merge_options(args, dict(_EVAL_DEFAULTS, test=""))
    test_path = args.test or opts.get("test")
    if not test_path:
        raise ConfigError("attack needs --test")
    if not opts["eps_list"]:
        raise ConfigError("attack needs --eps-list")
    test = data.read_pll_file(test_path)
    _require_labels(test, test_path)
    predictor = _load_predictor(args.checkpoints)
    sweep = evaluate.attack_sweep(
        predictor, test.features, test.true_labels, _parse_eps(opts["eps_list"]),
        steps=opts["attack_steps"],
    )
    rows = _meta_rows(opts, len(args.checkpoints)) + [("attack", _fmt(e), a) for e, a in sweep]
    write_report(args.out, rows)
    _print_table(rows)
    return 0


def cmd_ood(args):
    opts = _merge_options(args, dict(_EVAL_DEFAULTS, test="", ood=""))
    test_path = args.test or opts.get("test")
    ood_path = args.ood or opts.get("ood")
    if not test_path or not ood_path:
        raise ConfigError("ood needs --test and --ood")
    test = data.read_pll_file(test_path)
    ood_set = data.read_pll_file(ood_path)
    predictor = _load_predictor(args.checkpoints)
    ent_test = evaluate.entropy_samples(predictor, test.features)
    ent_ood = evaluate.entropy_samples(predictor, ood_set.features)
    report = evaluate.ood_report(ent_test, ent_ood, seed=opts["seed"])
    rows = _meta_rows(opts, len(args.checkpoints)) + [
        ("ood", "cdf_area", report.cdf_area),
        ("ood", "ks_stat", report.ks_stat),
        ("ood", "mmd", report.mmd),
    ]
    write_report(args.out, rows)
    if args.cdf_out:
        triples = evaluate.ecdf_breakpoints(ent_test, ent_ood)
        with open(args.cdf_out, "w") as fh:
            fh.write("entropy\tF_test\tF_ood\n")
            for h, ft, fo in triples:
                fh.write(f"{_fmt(float(h))}\t{_fmt(float(ft))}\t{_fmt(float(fo))}\n")
    _print_table(rows)
    return 0


def cmd_report(args):
    groups = {}
    hashes = []
    for path in args.inputs:
        for section, key, value in read_report(path):
            if section == "meta":
                if key == "config_hash":
                    hashes.append(value)
                continue
            try:
                num = float(value)
            except ValueError:
                continue
            groups.setdefault((section, key), []).append(num)
    rows = [("meta", "n_reports", str(len(args.inputs)))]
    rows.append(("meta", "config_hashes", ",".join(hashes)))
    for (section, key), values in groups.items():
        arr = np.asarray(values)
        rows.append((section, key, f"{_fmt(float(arr.mean()))}\t{_fmt(float(arr.std(ddof=0)))}"))
    with open(args.out, "w") as fh:
        for section, key, value in rows:
            fh.write(f"{section}\t{key}\t{value}\n")
    print(f"aggregated {len(args.inputs)} reports")
    _print_table([(s, k, v.replace("\t", " +/- ")) for s, k, v in rows])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="robust-pll",
        description="Partial-label learning with evidential uncertainty: "
        "noise generation, training, and robustness evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-noise", help="generate instance-dependent candidate sets")
    p.add_argument("--images", help="IDX image file")
    p.add_argument("--idx-labels", help="IDX label file")
    p.add_argument("--input", help="RPLL1 file with labels as the clean source")
    p.add_argument("--out", required=True, help="output RPLL1 path")
    p.add_argument("--seed", type=int)
    p.add_argument("--probe-epochs", type=int)
    p.add_argument("--probe-hidden", help="comma-separated hidden sizes")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_noise)

    p = sub.add_parser("train", help="train one model or an ensemble")
    p.add_argument("--data", help="training RPLL1 file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method", choices=sorted(METHODS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ensemble", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--hidden", help="comma-separated hidden sizes")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy, entropy, OOD, and attack batteries")
    p.add_argument("--test", help="test RPLL1 file (labels required)")
    p.add_argument("--ood", help="OOD RPLL1 file")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--eps-list", dest="eps_list")
    p.add_argument("--attack-steps", dest="attack_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="accuracy under the perturbation sweep")
    p.add_argument("--test")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--eps-list", dest="eps_list")
    p.add_argument("--attack-steps", dest="attack_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("ood", help="entropy-gap statistics against an OOD set")
    p.add_argument("--test")
    p.add_argument("--ood")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--cdf-out", help="write (entropy, F_test, F_ood) triples here")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ood)

    p = sub.add_parser("report", help="aggregate per-run reports to mean +/- std")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 4
    except RobustPllError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
