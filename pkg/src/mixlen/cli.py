"""Command-line front end.

Exit codes: 0 on success, 1 on runtime or model errors, 2 on usage and
validation errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .baselines import COMPARE_CSV_FIELDS, compare_methods
from .config import RunConfig, format_config, load_config
from .diffusion import ConditionalDiffusionRegressor, diffusion_loss
from .exceptions import (
    CalibrationError,
    ConfigError,
    DomainError,
    LoadError,
    MixlenError,
    SplitError,
    UsageError,
)
from .intervals import (
    evaluate,
    interval_rows,
    make_interval,
    mae,
    r2,
    rmse,
    underestimation_prob,
    write_interval_csv,
    write_report_json,
)
from .mechanistic import PipelineGeometry, austin_palfrey
from .pretrain import GradientBoostingEnsemble

log = logging.getLogger("mixlen")

USAGE_ERRORS = (ConfigError, DomainError, LoadError, SplitError, UsageError, CalibrationError)
TOY_FIELDS = ("x", "y")
CONDITIONER_FILE = "conditioner.json"
DIFFUSION_FILE = "diffusion.json"
TRAIN_LOG_FILE = "train_log.json"
CONFIG_FILE = "config.txt"


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


# -- data helpers ----------------------------------------------------------

class ToyData:
    """``x,y`` pairs from the toy generator, shaped like a Dataset for training."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)

    def __len__(self):
        return len(self.x)

    @property
    def X(self):
        return self.x[:, None]

    @property
    def targets(self):
        return self.y

    @property
    def truth(self):
        return self.y

    @property
    def offset(self):
        return np.zeros(len(self.x))

    def subset(self, idx):
        return ToyData(self.x[idx], self.y[idx])


class PipelineData:
    """Adapter exposing the training/evaluation view of a Dataset."""

    def __init__(self, ds):
        self.ds = ds

    def __len__(self):
        return len(self.ds)

    @property
    def X(self):
        return self.ds.X

    @property
    def targets(self):
        return np.asarray(self.ds.targets)

    @property
    def truth(self):
        return self.ds.c_ac

    @property
    def offset(self):
        return self.ds.c_ap


def write_toy_csv(x, y, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TOY_FIELDS)
        for a, b in zip(x, y):
            writer.writerow([repr(float(a)), repr(float(b))])


def load_toy_csv(path):
    xs, ys = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b = (float(v) for v in row)
            except ValueError:
                raise LoadError(f"malformed toy row {row!r}", line=line) from None
            xs.append(a)
            ys.append(b)
    return ToyData(xs, ys)


def detect_kind(path):
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return "toy" if [h.strip() for h in header] == list(TOY_FIELDS) else "pipeline"


def load_any(path):
    kind = detect_kind(path)
    if kind == "toy":
        return kind, load_toy_csv(path)
    return kind, dataio.load_csv(path)


def prepare_outputs(out_dir, names, force):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / n for n in names]
    clash = [str(p) for p in paths if p.exists()]
    if clash and not force:
        raise CliError(f"refusing to overwrite {', '.join(clash)} (use --force)")
    return paths


def resolve_config(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "threads", "epochs", "n_samples", "T"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "alphas", None):
        overrides["alphas"] = args.alphas
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    return load_config(getattr(args, "config", None), overrides)


# -- subcommands -------------------------------------------------------------

def cmd_ap_calc(args):
    try:
        geom = PipelineGeometry(args.L, args.d, args.Re, args.C0)
    except DomainError as exc:
        raise CliError(f"invalid {exc.field}: {exc}") from None
    value, tag = austin_palfrey(geom)
    print(f"{value:.3f} ({tag})")
    return 0


def cmd_gen(args):
    if args.n <= 0:
        raise CliError(f"--n must be positive, got {args.n}")
    seed = resolve_config(args).seed
    if args.toy:
        (path,) = prepare_outputs(args.out_dir, [args.name or "toy.csv"], args.force)
        x, y = dataio.gen_toy(args.n, seed)
        write_toy_csv(x, y, path)
        print(f"wrote {args.n} rows to {path} (toy generator, seed {seed})")
    else:
        (path,) = prepare_outputs(args.out_dir, [args.name or f"pipeline_{args.profile}.csv"], args.force)
        ds = dataio.gen_synthetic_pipeline(args.n, seed, args.profile)
        dataio.write_csv(ds, path)
        print(f"wrote {len(ds)} rows to {path} (pipeline generator, profile {args.profile}, seed {seed})")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    paths = prepare_outputs(args.out_dir, [CONDITIONER_FILE, DIFFUSION_FILE, TRAIN_LOG_FILE, CONFIG_FILE], args.force)
    kind, data = load_any(args.train)
    log_doc = {"kind": kind, "n_records": len(data)}
    if kind == "pipeline":
        kept, removed = dataio.filter_outliers(data, cfg.outlier_threshold)
        log_doc["n_outliers_removed"] = len(removed)
        train_ds, valid_ds = dataio.split(kept, cfg.train_fraction, cfg.seed)
        train, valid = PipelineData(train_ds), PipelineData(valid_ds)
    else:
        idx_train, idx_valid = _split_indices(len(data), cfg.train_fraction, cfg.seed)
        train, valid = data.subset(idx_train), data.subset(idx_valid)
    log_doc.update(n_train=len(train), n_valid=len(valid))

    conditioner = GradientBoostingEnsemble(**cfg.gbdt_params()).fit(train.X, train.targets)
    model = ConditionalDiffusionRegressor(conditioner=conditioner, **cfg.diffusion_params())
    model.fit(train.X, train.targets)

    valid_loss = None
    if len(valid):
        Xv = model._scale_X(valid.X)
        yv = (valid.targets - model.y_mean_) / model.y_scale_
        valid_loss = diffusion_loss(Xv, yv, model._scaled_conditioner(valid.X), model.net_,
                                    model.schedule_, np.random.default_rng(cfg.seed))
        log_doc["conditioner_valid_rmse"] = rmse(conditioner.predict(valid.X), valid.targets)
    log_doc.update(
        conditioner_train_rmse=rmse(conditioner.predict(train.X), train.targets),
        initial_loss=model.initial_loss_,
        loss_per_epoch=model.loss_curve_,
        valid_loss=valid_loss,
    )
    conditioner.save(paths[0])
    model.save(paths[1])
    paths[2].write_text(json.dumps(log_doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    paths[3].write_text(format_config(cfg), encoding="utf-8")
    print(f"trained on {len(train)} rows ({kind}); final loss {model.loss_curve_[-1] if model.loss_curve_ else float('nan'):.4f}")
    return 0


def _split_indices(n, fraction, seed):
    if n < 2:
        raise SplitError(f"need at least 2 records to split, got {n}")
    k = dataio.train_size(n, fraction)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def _point_metrics(point, truth):
    out = {"rmse": rmse(point, truth), "mae": mae(point, truth),
           "underestimation_prob": underestimation_prob(point, truth)}
    try:
        out["r2"] = r2(point, truth)
    except DomainError:
        out["r2"] = None
    return out


def cmd_evaluate(args):
    cfg = resolve_config(args)
    model_dir = Path(args.model_dir)
    model_path = model_dir / DIFFUSION_FILE
    if not model_path.is_file():
        raise CliError(f"no trained model at {model_path}", code=1)
    paths = prepare_outputs(args.out_dir, ["intervals.csv", "report.json"], args.force)
    model = ConditionalDiffusionRegressor.load(model_path)
    model.n_jobs = cfg.threads
    kind, data = load_any(args.test)
    if kind == "pipeline":
        data = PipelineData(data)
    if len(data) == 0:
        raise CliError("test file has no rows")
    samples = model.sample(data.X, cfg.n_samples, cfg.seed, conditioner_only=args.conditioner_only)
    samples = samples + data.offset[:, None]
    truth = data.truth

    reports, rows = [], []
    for a in cfg.alphas:
        est = [make_interval(s, a) for s in samples]
        point = np.array([e.point for e in est])
        lower = np.array([e.lower for e in est])
        upper = np.array([e.upper for e in est])
        reports.append(evaluate(point, lower, upper, truth, a))
        rows.extend(interval_rows(point, lower, upper, truth, a))
    write_interval_csv(rows, paths[0])

    baselines = {"conditioner": _point_metrics(model.conditioner_.predict(data.X) + data.offset, truth)}
    if kind == "pipeline":
        baselines["austin_palfrey"] = _point_metrics(data.offset, truth)
    write_report_json(reports, paths[1], kind=kind, n_samples=cfg.n_samples, seed=cfg.seed,
                      point_baselines=baselines)
    for r in reports:
        print(f"alpha={r.level:.2f} coverage={r.coverage:.3f} avg_radius={r.average_radius:.3f} "
              f"rmse={r.rmse:.3f} underest(upper)={r.underestimation_prob_upper:.3f}")
    return 0


def cmd_compare(args):
    cfg = resolve_config(args)
    kind, data = load_any(args.data)
    if kind != "pipeline":
        raise CliError("compare needs a pipeline CSV (L,d,Re,C0,C_AC)")
    if args.test:
        tkind, test = load_any(args.test)
        if tkind != "pipeline":
            raise CliError("--test must be a pipeline CSV")
        train, calib = dataio.split(data, 0.75, cfg.seed)
    else:
        train, rest = dataio.split(data, 0.6, cfg.seed)
        calib, test = dataio.split(rest, 0.5, cfg.seed + 1)
    names = ["comparison.csv"] + [f"intervals_{m}.csv" for m in ("diffusion", "linear_qr", "quantile_forest", "cqr")]
    paths = prepare_outputs(args.out_dir, names, args.force)
    configs = {"seed": cfg.seed, "diffusion": _compare_diffusion_params(cfg),
               "cqr": {"base": args.cqr_base}}
    if args.model_dir:
        model = ConditionalDiffusionRegressor.load(Path(args.model_dir) / DIFFUSION_FILE)
        model.n_jobs = cfg.threads
        configs["diffusion_model"] = model
    rows, intervals = compare_methods(train, calib, test, list(cfg.alphas), configs)
    with paths[0].open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.as_dict().items()})
    for path, method in zip(paths[1:], ("diffusion", "linear_qr", "quantile_forest", "cqr")):
        out = []
        for a in cfg.alphas:
            iv = intervals.get((method, a))
            if iv is not None:
                out.extend(interval_rows(iv["point"], iv["lower"], iv["upper"], iv["truth"], a))
        write_interval_csv(out, path)
    for row in rows:
        print(f"{row.method:16s} alpha={row.alpha:.2f} coverage={row.coverage:.3f} "
              f"avg_length={row.avg_length:.3f} {row.status}")
    return 1 if any(r.status != "ok" for r in rows) else 0


def _compare_diffusion_params(cfg):
    params = cfg.diffusion_params()
    params.pop("random_state")
    return params


# -- parser ------------------------------------------------------------------

def _alphas(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="mixlen", description="Mixed-oil length interval estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="key = value run configuration file")
        sp.add_argument("--seed", type=int, help="random seed (falls back to $MIXLEN_SEED)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        if out:
            sp.add_argument("--out-dir", default=".", help="directory for all outputs")
            sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("ap-calc", help="Austin-Palfrey mixed-oil length")
    sp.add_argument("--L", type=float, required=True, help="transport distance [m]")
    sp.add_argument("--d", type=float, required=True, help="inner diameter [m]")
    sp.add_argument("--Re", type=float, required=True, help="Reynolds number")
    sp.add_argument("--C0", type=float, default=0.0, help="initial mixed-oil length [m]")
    sp.set_defaults(func=cmd_ap_calc)

    sp = sub.add_parser("gen", help="write synthetic data")
    kind = sp.add_mutually_exclusive_group(required=True)
    kind.add_argument("--toy", action="store_true", help="x ~ U(0,10), y = x exp(eps)")
    kind.add_argument("--pipeline", action="store_true", help="synthetic pipeline records")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--profile", choices=sorted(dataio.PROFILES), default="train")
    sp.add_argument("--name", help="output file name")
    common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="fit the conditioner and the diffusion model")
    sp.add_argument("--train", required=True, help="training CSV (pipeline or toy)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--T", type=int)
    sp.add_argument("--threads", type=int)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="intervals and metrics on a test CSV")
    sp.add_argument("--model-dir", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--alphas", type=_alphas, help="comma-separated confidence levels")
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--conditioner-only", action="store_true", help=argparse.SUPPRESS)
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare", help="diffusion vs quantile baselines")
    sp.add_argument("--data", required=True, help="pipeline CSV; split 60/20/20 unless --test is given")
    sp.add_argument("--test", help="separate test CSV; --data is then split 75/25 into train/calibration")
    sp.add_argument("--model-dir", help="reuse a trained diffusion model instead of fitting one")
    sp.add_argument("--cqr-base", choices=("linear", "forest"), default="linear")
    sp.add_argument("--alphas", type=_alphas)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--threads", type=int)
    common(sp)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mixlen {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except USAGE_ERRORS as exc:
        print(f"mixlen {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except MixlenError as exc:
        print(f"mixlen {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
