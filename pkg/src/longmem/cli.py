"""Command-line interface: generate, estimate, train, evaluate, stress, bench.

Exit codes: 0 success, 2 usage/configuration, 3 I/O, 4 training divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path as FsPath

import numpy as np
import scipy

from . import __version__
from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    LongMemError,
    ShapeError,
    TrainingDiverged,
)
from .estimators import METHODS, get_method
from .experiment import (
    SCENARIOS,
    PriorSpec,
    TrainConfig,
    convert,
    default_prior,
    evaluate,
    finetune,
    sample_prior,
    stress_run,
    train,
)
from .fgn import CHOLESKY_MAX_N, FgnEngine, FgnSampler, Path, fgn_to_fbm
from .nn import CnnModel, checkpoint_load, checkpoint_save
from .processes import (
    FouParams,
    fou_substeps,
    sample_ar1,
    sample_arfima,
    sample_fou,
    sample_stable_levy,
)
from .rng import make_rng
from .seqio import SequenceFormatError, read_sequences, window_starts, write_sequences

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("longmem")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(target, args, started: float, extra=None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}
    manifest = {
        "command": sys.argv[:1] + list(getattr(args, "_argv", sys.argv[1:])),
        "seed": getattr(args, "seed", None),
        "config": cfg,
        "config_digest": _digest(cfg),
        "versions": {"longmem": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "timings": {"started": started, "elapsed_seconds": time.time() - started},
    }
    if extra:
        manifest.update(extra)
    FsPath(str(target) + ".manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def _load_prior(args) -> PriorSpec:
    if getattr(args, "prior", None):
        try:
            return PriorSpec.from_json(json.loads(FsPath(args.prior).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"prior file is not JSON: {exc}") from None
    return default_prior(args.process)


def _parse_schedule(text: str | None) -> list[tuple[int, int]]:
    if not text:
        return []
    out = []
    for item in text.split(","):
        try:
            n, e = item.split(":")
            out.append((int(n), int(e)))
        except ValueError:
            raise ConfigError(f"bad fine-tune entry {item!r}; expected LENGTH:EPOCHS") from None
    return out


def _load_model(path) -> CnnModel:
    return checkpoint_load(path)[0]


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

GEN_PROCESSES = ("fbm", "fgn", "arfima", "fou", "levy", "ar1")


def _fixed_params(args) -> dict:
    p = args.process
    if p in ("fbm", "fgn"):
        if args.hurst is None:
            raise ConfigError("--hurst is required (or pass --prior)")
        return {"H": args.hurst}
    if p == "arfima":
        if args.d is None:
            raise ConfigError("--d is required (or pass --prior)")
        return {"d": args.d}
    if p == "fou":
        if args.hurst is None:
            raise ConfigError("--hurst is required (or pass --prior)")
        return {"H": args.hurst, "alpha": args.alpha, "eta": args.eta,
                "mu": args.mu, "sigma": args.sigma}
    if p == "levy":
        return {"alpha": args.alpha}
    return {"a": args.alpha}


def _one_series(process: str, params: dict, n: int, dt: float, rng, engine: FgnEngine):
    if process in ("fbm", "fgn"):
        H = params["H"]
        if not 0 < H < 1:
            raise DomainError(f"Hurst exponent must lie in (0, 1), got {H}")
        noise = engine.sample_fgn_values(n, H, rng)
        if process == "fgn":
            return noise
        return fgn_to_fbm(Path(noise, 1.0, "fgn", {"H": H}), H, dt).values
    if process == "arfima":
        return sample_arfima(n, params["d"], rng).values
    if process == "fou":
        fp = FouParams(eta=params["eta"], hurst=params["H"], alpha=params["alpha"],
                       mu=params["mu"], sigma=params["sigma"], dt=dt)
        return sample_fou(fp, n, rng, substeps=fou_substeps(fp.alpha, dt)).values
    if process == "levy":
        return sample_stable_levy(n, params["alpha"], rng).values
    return sample_ar1(n, params["a"], rng).values


def cmd_generate(args) -> int:
    started = time.time()
    if args.n < 2 or args.count < 1:
        raise ConfigError("--n must be >= 2 and --count >= 1")
    prior = None
    if args.prior:
        prior = _load_prior(args)
        if prior.process != ("fbm" if args.process == "fgn" else args.process):
            raise ConfigError("prior process does not match --process")
    rng = make_rng(args.seed)
    engine = FgnEngine()
    dt = args.dt if args.dt is not None else (1.0 / args.n if args.process == "fou" else 1.0)
    series, truth = [], []
    for i in range(args.count):
        if prior is not None:
            params = sample_prior(prior, rng)
        else:
            params = _fixed_params(args)
        series.append(_one_series(args.process, params, args.n, dt, rng, engine))
        truth += [(i, k, v) for k, v in params.items()]
    out = FsPath(args.out)
    try:
        write_sequences(out, series, args.format)
        with open(str(out) + ".truth.csv", "w") as fh:
            fh.write("series_index,param,value\n")
            for i, k, v in truth:
                fh.write(f"{i},{k},{float(v)!r}\n")
        write_manifest(out, args, started)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc}") from exc
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    started = time.time()
    model = None
    if args.method == "cnn":
        if not args.model:
            raise UsageError("--model is required for method cnn")
        model = _load_model(args.model)
        want = model.topology.consumes
    else:
        want = get_method(args.method).consumes
    if args.stride is not None and args.window is None:
        raise UsageError("--stride needs --window")
    have = "path" if args.diff else "increments"
    rows, failures = [], 0
    for si, raw in enumerate(read_sequences(args.input, args.format)):
        if args.window:
            stride = args.stride or args.window
            chunks = [(s, raw[s:s + args.window]) for s in window_starts(raw.size, args.window, stride)]
        else:
            chunks = [(0, raw)]
        for start, seg in chunks:
            try:
                x = convert(seg[None, :], have, want)
                if model is not None:
                    value = float(model.predict(x)[0])
                else:
                    value = get_method(args.method).fn(x[0]).value
                rows.append((si, start, repr(float(value))))
            except (LongMemError, ValueError, ArithmeticError) as exc:
                failures += 1
                log.warning("series %d window %d: %s", si, start, exc)
                rows.append((si, start, "nan"))
    text = "series,window_start,estimate\n" + "".join(f"{a},{b},{c}\n" for a, b, c in rows)
    if args.out:
        FsPath(args.out).write_text(text)
        write_manifest(args.out, args, started)
    else:
        sys.stdout.write(text)
    if rows and failures == len(rows):
        log.error("every estimate failed")
        return EXIT_USAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,n,mean_mse\n")
        for epoch, n, mse in trace:
            fh.write(f"{epoch},{n},{mse!r}\n")


def cmd_train(args) -> int:
    started = time.time()
    if args.config:
        try:
            config = TrainConfig.from_json(json.loads(FsPath(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not JSON: {exc}") from None
    else:
        config = TrainConfig(
            prior=_load_prior(args), seq_len=args.n, batch_size=args.batch_size,
            virtual_epochs=args.epochs, seqs_per_epoch=args.seqs_per_epoch, lr=args.lr,
            finetune_schedule=_parse_schedule(args.finetune), seed=args.seed,
        )
    out = FsPath(args.out)
    trace_path = args.trace or str(out.with_suffix("")) + ".trace.csv"
    progress = []

    def cb(row):
        progress.append(row)
        log.info("epoch %d n=%d mse=%.6g", *row)

    try:
        if args.resume:
            model, state = checkpoint_load(args.resume)
            state.lr = config.lr
            result = finetune(model, state, [(config.seq_len, config.virtual_epochs)]
                              + config.finetune_schedule, config.prior, config.seed,
                              config.batch_size, config.seqs_per_epoch, cb)
        else:
            result = train(config, callback=cb)
    except TrainingDiverged:
        _write_trace(trace_path, progress)
        raise
    checkpoint_save(result.model, result.state, out)
    _write_trace(trace_path, result.trace)
    write_manifest(out, args, started, {"train_config": config.to_json(), "drawn": result.drawn})
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    started = time.time()
    if args.count < 100:
        raise ConfigError("--count must be >= 100")
    spec = _load_prior(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    outdir = FsPath(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    table = ["method,process,n,count,mse,b_hat,sigma_hat,errors_excluded"]
    for name in methods:
        if name == "cnn":
            if not args.model:
                raise UsageError("--model is required for method cnn")
            est = _load_model(args.model)
        else:
            get_method(name)
            est = name
        bundle = evaluate(est, spec, args.n, args.count, args.epsilon, args.seed)
        (outdir / f"{name}.json").write_text(json.dumps(bundle.to_json(), indent=2))
        table.append(f"{name},{spec.process},{args.n},{bundle.count},{bundle.mse!r},"
                     f"{bundle.b_hat!r},{bundle.sigma_hat!r},{bundle.errors_excluded}")
    (outdir / "table.csv").write_text("\n".join(table) + "\n")
    write_manifest(outdir / "evaluate", args, started, {"prior": spec.to_json()})
    print("\n".join(table))
    return EXIT_OK


# ---------------------------------------------------------------------------
# stress
# ---------------------------------------------------------------------------

def cmd_stress(args) -> int:
    started = time.time()
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    if args.model:
        est = _load_model(args.model)
    elif args.method:
        get_method(args.method)
        est = args.method
    else:
        raise UsageError("pass --model or --method")
    knobs = [float(v) for v in args.knobs.split(",")] if args.knobs else None
    res = stress_run(est, args.scenario, n=args.n, count=args.count, seed=args.seed, knobs=knobs)
    if args.out:
        FsPath(args.out).write_text(res.to_csv())
        write_manifest(args.out, args, started)
    else:
        sys.stdout.write(res.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_GENERATORS = ("circulant-cached", "circulant-online", "cholesky")


def bench(generator: str, n: int, count: int, hurst: float = 0.7, seed: int = 0) -> dict:
    """Wall-clock of the first sequence and of ``count`` sequences (first included)."""
    if generator not in BENCH_GENERATORS:
        raise ConfigError(f"unknown generator {generator!r}")
    if count < 1 or n < 2:
        raise ConfigError("need n >= 2 and count >= 1")
    if generator == "cholesky" and n > CHOLESKY_MAX_N:
        raise ConfigError(f"cholesky is limited to n <= {CHOLESKY_MAX_N}")
    rng = make_rng(seed)
    engine = FgnEngine()
    if generator == "cholesky":
        def one():
            return engine.sample_fgn_cholesky(n, hurst, rng).values
    else:
        # both circulant variants hand out the two paths of each FFT pass;
        # on-line recomputes the spectrum on every pass
        sampler = FgnSampler(rng, engine, cache=generator == "circulant-cached")

        def one():
            return sampler.next(n, hurst).values
    times = []
    t0 = time.perf_counter()
    for _ in range(count):
        t = time.perf_counter()
        one()
        times.append(time.perf_counter() - t)
    total = time.perf_counter() - t0
    # amortized cost of the sequences after the first
    steady = float(np.mean(times[1:])) if count > 1 else times[0]
    return {"generator": generator, "n": n, "count": count, "hurst": hurst,
            "first_seconds": times[0], "total_seconds": total,
            "steady_per_sequence_seconds": steady}


BENCH_SCHEMA = {"generator": str, "n": int, "count": int, "hurst": float,
                "first_seconds": float, "total_seconds": float,
                "steady_per_sequence_seconds": float}


def cmd_bench(args) -> int:
    report = bench(args.generator, args.n, args.count, args.hurst, args.seed)
    text = json.dumps(report, indent=2)
    if args.out:
        FsPath(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="longmem", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate sample paths")
    g.add_argument("--process", choices=GEN_PROCESSES, required=True)
    g.add_argument("--hurst", type=float)
    g.add_argument("--d", type=float)
    g.add_argument("--alpha", type=float, default=1.0,
                   help="fOU mean reversion, Levy stability index or AR(1) coefficient")
    g.add_argument("--eta", type=float, default=0.0)
    g.add_argument("--mu", type=float, default=0.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--dt", type=float, help="time step (default 1, or 1/n for fou)")
    g.add_argument("--prior", help="JSON PriorSpec; parameters are drawn per series")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "bin"))
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="estimate memory parameters of stored series")
    e.add_argument("--method", choices=sorted(METHODS) + ["cnn"], required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--format", choices=("csv", "bin"))
    e.add_argument("--diff", action="store_true",
                   help="input rows are cumulated paths (differenced where a method needs increments)")
    e.add_argument("--window", type=int)
    e.add_argument("--stride", type=int)
    e.add_argument("--model")
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("train", help="train the CNN estimator on synthetic data")
    t.add_argument("--process", choices=("fbm", "arfima", "fou"), default="fbm")
    t.add_argument("--prior")
    t.add_argument("--config", help="JSON TrainConfig (overrides the flags)")
    t.add_argument("--n", type=int, default=100)
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--seqs-per-epoch", type=int, default=100_000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--finetune", help="schedule such as 200:1,400:1")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--trace")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("evaluate", help="MSE and bias/deviation metrics on fresh paths")
    v.add_argument("--methods", required=True, help="comma-separated; 'cnn' needs --model")
    v.add_argument("--model")
    v.add_argument("--process", choices=("fbm", "arfima", "fou"), default="fbm")
    v.add_argument("--prior")
    v.add_argument("--n", type=int, required=True)
    v.add_argument("--count", type=int, default=10_000)
    v.add_argument("--epsilon", type=float, default=0.025)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True, help="output directory")
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stress", help="scatter of inferred values over a stress scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--model")
    s.add_argument("--method")
    s.add_argument("--n", type=int, default=1600)
    s.add_argument("--count", type=int, default=2000)
    s.add_argument("--knobs", help="comma-separated knob values to cycle through")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stress)

    b = sub.add_parser("bench", help="time the fGn generators")
    b.add_argument("--generator", choices=BENCH_GENERATORS, required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--count", type=int, default=100)
    b.add_argument("--hurst", type=float, default=0.7)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, SequenceFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LongMemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
