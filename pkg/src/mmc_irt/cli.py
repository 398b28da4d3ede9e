"""``mmc-irt`` command line: fit, score, bit scales, diagnostics, CV and simulation."""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NumericError
from .baseline_mml import mml_fit_nr
from .bitscale import bit_score, build_bitscale, resolve_theta0
from .data import DataError, load_csv, write_csv
from .evaluation import (
    cross_validate,
    default_grid,
    evaluate,
    grouped_residuals,
    theta_groups,
    write_cv_csv,
)
from .scoring import ItemMismatchError, score
from .simulation import MODELS, GeneratorSpec, SimConfig, SpecError, generate, run_simulation
from .training import FitError, FittedModel, Hyperparams, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MMC_IRT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"MMC_IRT_SEED must be an integer, got {env!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args):
    if not args.data or not args.key:
        raise ConfigError("--data and --key are required")
    for p in (args.data, args.key):
        if not Path(p).is_file():
            raise DataError(f"no such file: {p}")
    return load_csv(args.data, args.key, args.missing_category)


def _load_fit(args) -> FittedModel:
    if not args.fit:
        raise ConfigError("--fit is required")
    if not Path(args.fit).is_file():
        raise DataError(f"no such file: {args.fit}")
    try:
        return FittedModel.load(args.fit)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.fit}: not a fitted model ({exc})") from None


# subcommands ---------------------------------------------------------------------


def cmd_generate(args, out: Path) -> list[str]:
    spec = GeneratorSpec(args.items, args.options, args.latent, args.family, args.missing_rate, args.item_seed)
    rm = generate(spec, args.n, args.seed)
    write_csv(rm, out / "responses.csv", out / "key.csv")
    _write_rows(out / "theta_true.csv", ["person", "theta"], [[i, _fmt(t)] for i, t in enumerate(rm.theta)])
    return ["responses.csv", "key.csv", "theta_true.csv"]


def _hyperparams(args) -> Hyperparams:
    return Hyperparams(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, hidden_layers=args.layers, seed=args.seed,
    )


def cmd_fit(args, out: Path) -> list[str]:
    rm = _load(args)
    if args.fitter == "mml":
        if args.model != "nr":
            raise ConfigError("the MML fitter supports only the nr model")
        fitted = mml_fit_nr(rm)
    else:
        fitted = fit(args.model, rm, _hyperparams(args))
    fitted.save(out / "model.json")
    fitted.write_log_csv(out / "training_log.csv")
    return ["model.json", "training_log.csv"]


def cmd_score(args, out: Path) -> list[str]:
    """Both estimates side by side; NN is blank for fits without an encoder."""
    fitted, rm = _load_fit(args), _load(args)
    ml = score(fitted, rm, "ml").theta
    nn = score(fitted, rm, "nn").theta if fitted.encoder is not None else [None] * len(ml)
    rows = [[p, "" if a is None else _fmt(a), _fmt(b)] for p, a, b in zip(rm.ids(), nn, ml)]
    _write_rows(out / "scores.csv", ["person", "theta_nn", "theta_ml"], rows)
    return ["scores.csv"]


def cmd_bit(args, out: Path) -> list[str]:
    fitted, rm = _load_fit(args), _load(args)
    theta0 = resolve_theta0(fitted, args.theta0, seed=args.seed)
    table = build_bitscale(fitted, theta0, args.grid_size, rm.item_ids)
    table.to_csv(out / "bitscale.csv")
    est = score(fitted, rm, args.score)
    items, total = bit_score(table, est.theta)
    rows = [[p, _fmt(t), _fmt(b), *map(_fmt, row)] for p, t, b, row in zip(rm.ids(), est.theta, total, items)]
    _write_rows(out / "bit_scores.csv", ["person", "theta", "B", *[f"B_{i}" for i in rm.item_ids]], rows)
    return ["bitscale.csv", "bit_scores.csv"]


def cmd_eval(args, out: Path) -> list[str]:
    fitted, rm = _load_fit(args), _load(args)
    if args.score == "nn" and fitted.encoder is None:
        raise ConfigError("NN scoring needs an autoencoder fit")
    report = evaluate(fitted, rm, args.score, args.groups)
    report.to_json(out / "report.json", list(rm.item_ids))
    rows = [
        [p, item, _fmt(v)]
        for p, resid in zip(rm.ids(), report.residuals)
        for item, v in zip(rm.item_ids, resid)
    ]
    _write_rows(out / "residuals.csv", ["person", "item", "residual"], rows)
    files = ["report.json", "residuals.csv"]
    if report.grouped is not None:
        report.grouped.to_csv(out / "grouped_residuals.csv", list(rm.item_ids))
        files.append("grouped_residuals.csv")
    return files


def cmd_cv(args, out: Path) -> list[str]:
    rm = _load(args)
    grid = default_grid(args.model)
    if args.lr_grid or args.batch_grid or args.layers_grid:
        lrs = args.lr_grid or sorted({g["learning_rate"] for g in grid})
        batches = args.batch_grid or sorted({g["batch_size"] for g in grid})
        layers = args.layers_grid or sorted({g["hidden_layers"] for g in grid})
        grid = [
            {"learning_rate": lr, "batch_size": bs, "hidden_layers": hl}
            for bs in batches for lr in lrs for hl in (layers if args.model == "mmc" else [1])
        ]
    base = Hyperparams(epochs=args.epochs, seed=args.seed)
    results = cross_validate(args.model, rm, grid, args.folds, args.seed, base, threads=args.threads)
    write_cv_csv(results, out / "cv.csv")
    return ["cv.csv"]


def cmd_simulate(args, out: Path) -> list[str]:
    if args.data or args.key:
        source = _load(args)
    else:
        source = GeneratorSpec(args.items, args.options, args.latent, args.family, args.missing_rate, args.item_seed)
    models = tuple(args.models.split(","))
    epochs = {"epochs": args.epochs}
    cfg = SimConfig(
        lengths=tuple(args.lengths or [source.n_items]),
        sample_sizes=tuple(args.sizes),
        replications=args.reps,
        source=source,
        pool_size=args.pool,
        seed=args.seed,
        models=models,
        hyperparams={"mmc-ae": {**epochs, "hidden_layers": args.layers}, "nr-ae": epochs},
        threads=args.threads,
    )
    run_simulation(cfg).to_csv(out / "simulation.csv")
    return ["simulation.csv"]


def _svg(path: Path, xs, curves, dots, x_label: str) -> None:
    """Polyline per option plus observed-proportion points."""
    width, height, pad = 480, 320, 40
    lo, hi = float(np.min(xs)), float(np.max(xs))
    span = hi - lo if hi > lo else 1.0

    def px(x):
        return pad + (x - lo) / span * (width - 2 * pad)

    def py(p):
        return height - pad - p * (height - 2 * pad)

    colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#999"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{x_label}</text>',
    ]
    for m, curve in enumerate(curves):
        pts = " ".join(f"{px(x):.2f},{py(p):.2f}" for x, p in zip(xs, curve))
        parts.append(f'<polyline fill="none" stroke="{colors[m % len(colors)]}" points="{pts}"/>')
    for x, m, p in dots:
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(p):.2f}" r="3" fill="{colors[m % len(colors)]}"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def cmd_export_irf(args, out: Path) -> list[str]:
    fitted = _load_fit(args)
    model = fitted.model
    rm = _load(args) if args.data else None
    item_ids = list(rm.item_ids) if rm is not None else [f"item{j + 1}" for j in range(model.n_items)]
    grid = np.linspace(*model.bounds, args.grid_size)
    table = None
    if args.axis == "bit":
        theta0 = resolve_theta0(fitted, args.theta0, seed=args.seed)
        table = build_bitscale(fitted, theta0, args.grid_size, item_ids)
        grid = table.grid[table.grid >= theta0]
    probs = model.probs(grid)
    bits = bit_score(table, grid)[0] if table is not None else None
    grouped = theta_mean = None
    if rm is not None and rm.n_persons >= args.groups:
        theta = score(fitted, rm, args.score).theta
        grouped = grouped_residuals(fitted, rm, args.groups, theta=theta)
        theta_mean = np.array([theta[g].mean() for g in theta_groups(theta, args.groups)])
    files = []
    for j, item in enumerate(item_ids):
        m_count = int(model.categories[j])
        header = ["theta", *(["bits"] if bits is not None else []), *[f"p{m}" for m in range(m_count)]]
        rows = [
            [_fmt(t), *([_fmt(bits[k, j])] if bits is not None else []), *map(_fmt, probs[k, j, :m_count])]
            for k, t in enumerate(grid)
        ]
        name = f"irf_{item}.csv"
        _write_rows(out / name, header, rows)
        files.append(name)
        dots = []
        if grouped is not None:
            x_dots = theta_mean if bits is None else bit_score(table, theta_mean)[0][:, j]
            dot_rows = [
                [g + 1, _fmt(theta_mean[g]), _fmt(x_dots[g]), m, _fmt(grouped.observed[g, j, m]),
                 _fmt(grouped.expected[g, j, m])]
                for g in range(args.groups) for m in range(m_count)
            ]
            dname = f"dots_{item}.csv"
            _write_rows(out / dname, ["group", "theta", "x", "option", "P", "p"], dot_rows)
            files.append(dname)
            dots = [(x_dots[g], m, grouped.observed[g, j, m]) for g in range(args.groups) for m in range(m_count)]
        if args.svg:
            xs = grid if bits is None else bits[:, j]
            _svg(out / f"irf_{item}.svg", xs, probs[:, j, :m_count].T, dots, args.axis)
            files.append(f"irf_{item}.svg")
    return files


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "score": cmd_score,
    "bit": cmd_bit,
    "eval": cmd_eval,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "export-irf": cmd_export_irf,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmc-irt", description="Monotone multiple choice IRT toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="random seed (default $MMC_IRT_SEED or 0)")
    common.add_argument("--threads", type=int, default=1)

    data = _Parser(add_help=False)
    data.add_argument("--data", help="response CSV")
    data.add_argument("--key", help="answer key CSV")
    data.add_argument("--missing-category", action="store_true", help="keep missing responses as a category")

    model = _Parser(add_help=False)
    model.add_argument("--model", choices=("nr", "mmc"), default="mmc")
    model.add_argument("--epochs", type=int, default=200)

    train = _Parser(add_help=False)
    train.add_argument("--fitter", choices=("ae", "mml"), default="ae")
    train.add_argument("--lr", type=float, default=0.04)
    train.add_argument("--batch", type=int, default=128)
    train.add_argument("--layers", type=int, default=1)

    fitted = _Parser(add_help=False)
    fitted.add_argument("--fit", help="model.json written by the fit command")
    fitted.add_argument("--score", choices=("nn", "ml"), default="ml")

    bits = _Parser(add_help=False)
    bits.add_argument("--theta0", choices=("guessing", "lower"), default="guessing")
    bits.add_argument("--grid-size", type=int, default=1001)

    groups = _Parser(add_help=False)
    groups.add_argument("--groups", type=int, default=10)

    gen = _Parser(add_help=False)
    gen.add_argument("--items", type=int, default=20)
    gen.add_argument("--options", type=int, default=4)
    gen.add_argument("--latent", choices=("normal", "skewed"), default="skewed")
    gen.add_argument("--family", choices=("nr", "tabulated"), default="tabulated")
    gen.add_argument("--missing-rate", type=float, default=0.0)
    gen.add_argument("--item-seed", type=int, default=0)

    p = sub.add_parser("generate", parents=[common, gen], help="write a synthetic data set")
    p.add_argument("--n", type=int, default=2000)
    sub.add_parser("fit", parents=[common, data, model, train], help="fit an NR or MMC model")
    sub.add_parser("score", parents=[common, data, fitted], help="NN and ML theta estimates")
    sub.add_parser("bit", parents=[common, data, fitted, bits], help="bit-scale table and scores")
    sub.add_parser("eval", parents=[common, data, fitted, groups], help="held-out fit report")
    p = sub.add_parser("cv", parents=[common, data, model], help="cross-validated grid search")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--lr", dest="lr_grid", type=_float_list, default=None)
    p.add_argument("--batch", dest="batch_grid", type=_int_list, default=None)
    p.add_argument("--layers", dest="layers_grid", type=_int_list, default=None)
    p = sub.add_parser("simulate", parents=[common, data, gen], help="resampling simulation study")
    p.add_argument("--lengths", type=_int_list, default=None)
    p.add_argument("--sizes", type=_int_list, default=[1000])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--pool", type=int, default=10000)
    p.add_argument("--models", default=",".join(MODELS))
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--epochs", type=int, default=200)
    p = sub.add_parser("export-irf", parents=[common, data, fitted, bits, groups], help="plot-ready IRF curves")
    p.add_argument("--axis", choices=("theta", "bit"), default="theta")
    p.add_argument("--svg", action="store_true")
    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    return parser


def _versions() -> dict:
    import scipy

    return {"mmc_irt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _check(args) -> None:
    for name in ("epochs", "reps", "pool", "n", "folds", "groups", "grid_size", "items", "options", "threads"):
        value = getattr(args, name, None)
        if value is not None and value < (0 if name == "epochs" else 1):
            raise ConfigError(f"--{name.replace('_', '-')} must be positive")
    if getattr(args, "models", None):
        unknown = set(args.models.split(",")) - set(MODELS)
        if unknown:
            raise ConfigError(f"unknown models {sorted(unknown)}; choose from {','.join(MODELS)}")


def _run(argv) -> None:
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise ConfigError("a subcommand is required")
    if args.command == "rerun":
        with open(args.manifest, encoding="utf-8") as fh:
            manifest = json.load(fh)
        replay = list(manifest["argv"])
        out = args.out or manifest["out"]
        _run([*replay, "--out", out])
        return
    args.seed = _seed(args)
    _check(args)
    for name in ("data", "key", "fit"):
        if getattr(args, name, None):
            setattr(args, name, str(Path(getattr(args, name)).resolve()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = COMMANDS[args.command](args, out)
    # the recorded argv replays the run with every option resolved
    config = {k: v for k, v in vars(args).items() if k not in ("command", "out")}
    replay = [args.command]
    for key, value in sorted(config.items()):
        flag = "--" + key.replace("_", "-")
        dest = {"lr_grid": "--lr", "batch_grid": "--batch", "layers_grid": "--layers"}.get(key, flag)
        if value is None or value is False:
            continue
        if value is True:
            replay.append(dest)
        elif isinstance(value, list):
            replay += [dest, ",".join(map(str, value))]
        else:
            replay += [dest, str(value)]
    manifest = {
        "command": args.command,
        "config": config,
        "argv": replay,
        "out": str(out.resolve()),
        "seed": args.seed,
        "versions": _versions(),
        "outputs": files,
    }
    with open(out / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def main(argv=None) -> int:
    try:
        _run(sys.argv[1:] if argv is None else argv)
    except (ConfigError, SpecError) as exc:
        print(f"CONFIG_INVALID: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ItemMismatchError, FileNotFoundError) as exc:
        print(f"DATA_INVALID: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"NUMERIC_FAILURE: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"CONFIG_INVALID: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
