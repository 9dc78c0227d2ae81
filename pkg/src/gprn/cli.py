"""Command-line interface: ``gprn {train,predict,evaluate,gradcheck,oracle,bench,synth}``.

Failures exit with 2 (config), 3 (data), 4 (numerical) or 5 (oracle) and
print one JSON error record on stderr.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, override
from .data import load_csv, metrics, normalize, save_csv, split
from .errors import ConfigError, DataError, GprnError, NumericalError
from .model import Dataset, GprnHyper, make_tensorization, sample_gprn
from .predict import predict_mean, project, sample_logliks

log = logging.getLogger("gprn")

TRACE_COLUMNS = ["epoch", "kl_w", "kl_f", "exp_loglik", "total", "grad_norm", "seconds"]


def _write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    _write_text(path, buf.getvalue())


def _parse_dims(text):
    if text is None:
        return None
    try:
        dims = tuple(int(t) for t in text.lower().replace("x", ",").split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"cannot parse dims {text!r}; use e.g. 4x4 or 4,4") from None
    if not dims:
        raise ConfigError("empty dims")
    return dims


def _parse_split(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError("split must be 'train,test'")
    out = []
    for p in parts:
        p = p.strip()
        out.append(int(p) if p.isdigit() and int(p) > 1 else float(p))
    return tuple(out)


def _load_inputs(path):
    """CSV with x columns and optionally y columns; returns only X."""
    return load_csv(path, require_y=False).X


# -- commands -----------------------------------------------------------------

def cmd_train(args):
    from .train import train

    config = load_config(args.config) if args.config else RunConfig()
    config = override(config, data=args.data, K=args.K, M=args.M, dims=_parse_dims(args.dims),
                      seed=args.seed, split=_parse_split(args.split), jitter=args.jitter,
                      out=args.out, diagonal=True if args.diagonal else None,
                      learning_rate=args.lr, epochs=args.epochs)
    if config.data is None:
        raise ConfigError("no dataset: pass --data or set 'data' in the config")
    full = load_csv(config.data)
    spec = config.tensorization(full.D)
    train_raw, test_raw = split(full, config.split, config.seed)
    train_set, record = normalize(train_raw)
    os.makedirs(config.out, exist_ok=True)

    model, trace = train(train_set, config.adam, config.K, spec, config.seed,
                         jitter=config.jitter, diagonal=config.diagonal)
    save_checkpoint(model, os.path.join(config.out, "checkpoint"))
    _write_csv(os.path.join(config.out, "trace.csv"), TRACE_COLUMNS,
               ([r[c] for c in TRACE_COLUMNS] for r in trace.rows()))
    save_csv(train_raw, os.path.join(config.out, "train.csv"))
    if test_raw.N > 0:
        save_csv(test_raw, os.path.join(config.out, "test.csv"))
    _write_text(os.path.join(config.out, "config.json"),
                json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    totals = trace.totals()
    summary = {"out": config.out, "epochs": len(trace),
               "initial_elbo": float(totals[0]) if len(totals) else model.final_elbo.total,
               "final_elbo": model.final_elbo.total}
    print(json.dumps(summary))
    return 0


def cmd_predict(args):
    model = load_checkpoint(args.checkpoint)
    X_star = _load_inputs(args.inputs)
    pred = predict_mean(project(model, X_star))
    header = [f"y{j}" for j in range(pred.shape[1])]
    rows = ([float(v) for v in row] for row in pred)
    if args.out:
        _write_csv(args.out, header, rows)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.17g}" for v in row])
    return 0


def cmd_evaluate(args):
    model = load_checkpoint(args.checkpoint)
    test = load_csv(args.test)
    proj = project(model, test.X)
    report = metrics(predict_mean(proj), test.Y)
    out = report.to_dict()
    if args.samples:
        qF, qW, hyper = model.posteriors
        values = sample_logliks(proj, qF, qW, test.Y, hyper.sigma_y, args.samples,
                                args.seed, args.mode)
        report.predictive_loglik = math.fsum(values) / args.samples
        out = report.to_dict()
        out["predictive"] = {"T": args.samples, "seed": args.seed, "mode": args.mode,
                             "value": report.predictive_loglik}
    text = json.dumps(out, sort_keys=True)
    if args.out:
        _write_text(args.out, text + "\n")
    print(text)
    return 0


def cmd_gradcheck(args):
    from .dense import random_instance
    from .train import grad_check

    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if args.data is None:
            raise ConfigError("gradcheck on a checkpoint needs --data (the run's train.csv)")
        data = load_csv(args.data)
        data, _ = normalize(data, model.normalization)
        if data.X.shape != model.X.shape or not np.allclose(data.X, model.X, rtol=1e-12, atol=1e-12):
            raise DataError(f"{args.data} does not hold the checkpoint's training inputs")
        if data.D != model.spec.D:
            raise DataError(f"{args.data} has {data.D} outputs, checkpoint expects {model.spec.D}")
        params = model.params
        jitter = model.jitter
    else:
        rng = np.random.default_rng(args.seed)
        params, data, _, _ = random_instance(rng, args.N, args.K, _parse_dims(args.dims))
        jitter = 1e-8
    errors = grad_check(params, data, h=args.h, jitter=jitter)
    worst = max(errors.values())
    print(json.dumps({"blocks": errors, "worst": worst, "tolerance": args.tol, "h": args.h}))
    if not worst <= args.tol:
        raise NumericalError(f"gradient check failed: worst relative error {worst:.3e}")
    return 0


def cmd_oracle(args):
    from .dense import run_oracle_suite

    t0 = time.perf_counter()
    results = run_oracle_suite(n_instances=args.instances, seed=args.seed, rtol=args.rtol)
    worst = max(rel for _, rel in results)
    print(json.dumps({"instances": len(results), "worst_rel_error": worst,
                      "rtol": args.rtol, "seconds": time.perf_counter() - t0}))
    return 0


def cmd_bench(args):
    from .gradient import elbo_and_grad
    from .train import initial_params

    Ks = [int(k) for k in args.K.split(",")]
    dim_grid = [_parse_dims(d) for d in args.dims.split(";")]
    rng = np.random.default_rng(args.seed)
    X = rng.uniform(-1, 1, size=(args.N, 1))
    rows = []
    for dims in dim_grid:
        D = int(np.prod(dims))
        spec = make_tensorization(D, dims=dims)
        data = Dataset(X, rng.standard_normal((args.N, D)))
        for K in Ks:
            params = initial_params(args.N, K, spec, args.seed, GprnHyper())
            elbo_and_grad(params, data)  # warm-up
            t0 = time.perf_counter()
            for _ in range(args.epochs):
                elbo_and_grad(params, data)
            sec = (time.perf_counter() - t0) / args.epochs
            rows.append([K, D, "x".join(map(str, dims)), args.N, args.epochs, sec])
            log.info("K=%d D=%d: %.4g s/epoch", K, D, sec)
    header = ["K", "D", "dims", "N", "epochs", "seconds_per_epoch"]
    if args.out:
        _write_csv(args.out, header, rows)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow(r)
    return 0


def cmd_synth(args):
    dims = _parse_dims(args.dims)
    spec = make_tensorization(int(np.prod(dims)), dims=dims)
    rng = np.random.default_rng(args.seed)
    X = rng.uniform(args.low, args.high, size=(args.N, args.p))
    hyper = GprnHyper.from_values(args.lengthscale_f, args.amplitude_f, args.lengthscale_w,
                                  args.amplitude_w, args.sigma_f, args.sigma_y)
    ds, W, F = sample_gprn(X, hyper, args.K, spec, seed=args.seed + 1)
    save_csv(ds, args.out)
    sidecar = os.path.splitext(args.out)[0] + ".latents.npz"
    tmp = sidecar + ".tmp.npz"
    np.savez(tmp, W=W, F=F, X=X, dims=np.array(dims), hyper=hyper.to_array())
    os.replace(tmp, sidecar)
    print(json.dumps({"out": args.out, "latents": sidecar, "N": args.N, "D": spec.D}))
    return 0


# -- parser -------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="gprn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write checkpoint + trace")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--K", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--dims", help="output grid, e.g. 4x4")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="train,test as fractions or row counts")
    p.add_argument("--jitter", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.add_argument("--diagonal", action="store_true", help="diagonal Cholesky factors only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior-mean predictions as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics JSON on a test CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--samples", type=int, default=0, help="Monte-Carlo draws for the predictive log-likelihood")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["joint", "per_output"], default="joint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradient")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--dims", default="2x3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle", help="structured vs dense ELBO equivalence suite")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-9)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="per-epoch time over a K x D grid")
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--K", default="2,5,15,50")
    p.add_argument("--dims", default="8x8;16x16;32x32", help="';'-separated grids")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="sample a dataset from the GPRN prior")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--dims", default="4x4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--low", type=float, default=-2.0)
    p.add_argument("--high", type=float, default=2.0)
    p.add_argument("--lengthscale-f", type=float, default=1.0)
    p.add_argument("--amplitude-f", type=float, default=1.0)
    p.add_argument("--lengthscale-w", type=float, default=1.0)
    p.add_argument("--amplitude-w", type=float, default=1.0)
    p.add_argument("--sigma-f", type=float, default=0.01)
    p.add_argument("--sigma-y", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _error_record(exc, code):
    return json.dumps({"error": type(exc).__name__, "exit_code": code,
                       "message": str(exc).replace("\n", " ")})


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; keep its exit code for --help
        if exc.code not in (0, None):
            print(_error_record(ConfigError("invalid command-line arguments"), 2), file=sys.stderr)
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GprnError as exc:
        print(_error_record(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        code = DataError.exit_code if isinstance(exc, OSError) else ConfigError.exit_code
        print(_error_record(exc, code), file=sys.stderr)
        return code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(_error_record(exc, NumericalError.exit_code), file=sys.stderr)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
