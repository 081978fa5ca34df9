"""Command-line entry point: ``irsde <command> [options]``.

Exit codes: 0 ok, 1 a check failed, 2 usage or configuration error,
3 runtime abort (divergence, numerical breakdown, write failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_config, sde_config, set_dotted, train_config
from .degradations import TASKS, make_dataset
from .denoising import denoise, t_star
from .imageio import load_dataset, read_state, save_dataset, write_state
from .metrics import mse, psnr, ssim
from .model import ScoreModel
from .oracles import GROUPS, run_checks
from .plotting import EmptyPlotError, plot_csv
from .sde import DegenerateVarianceError, transition_stats
from .solvers import DivergenceError, ExactScore, LearnedScore, restore, terminal_state
from .training import TrainingDivergedError, canonical_objective, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
STEP_LOG_COLUMNS = ("i", "score_norm", "drift_norm", "noise_norm", "psnr")
METRIC_COLUMNS = ("id", "task", "method", "psnr", "ssim", "mse")


class UsageError(ValueError):
    pass


# -- helpers -----------------------------------------------------------------

def _versions() -> dict:
    import matplotlib
    import scipy

    return {"irsde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def write_manifest(path, command: str, args: argparse.Namespace, cfg: dict, seed, outputs) -> Path:
    """Everything needed to rerun ``command``: resolved config, arguments, seed, versions."""
    arguments = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                 if k not in ("func", "set")}
    doc = {"command": command, "arguments": arguments, "config": cfg, "config_hash": config_hash(cfg),
           "seed": seed, "versions": _versions(), "outputs": [str(o) for o in outputs]}
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, default=str))
    return path


def _read_input(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"input file {path} does not exist")
    return read_state(path)


def _ext(state) -> str:
    return "pgm" if np.ndim(state) == 2 else "csv"


def write_step_log(path, logs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_LOG_COLUMNS)
        for log in logs:
            w.writerow([log.i, repr(log.score_norm), repr(log.drift_norm), repr(log.noise_norm),
                        "" if log.psnr is None else repr(log.psnr)])


def _write_snapshots(out: Path, states, start: int, every: int, maxval: int) -> list:
    """``states[k]`` is the state at step ``start - k``; keep every ``every``-th plus the last."""
    written = []
    for k, state in enumerate(states):
        step = start - k
        if k % every == 0 or k == len(states) - 1:
            p = out / f"step_{step:04d}.{_ext(state)}"
            write_state(p, state, maxval)
            written.append(p)
    return written


def _load_model(path, ndim: int) -> ScoreModel:
    model = ScoreModel.load(path)
    if len(model.patch_shape) != ndim:
        raise UsageError(f"model patches are {len(model.patch_shape)}-d but the data is {ndim}-d")
    return model


def _score_source(args, mu_shape):
    if args.model and args.clean:
        raise UsageError("give either --model or --clean, not both")
    if args.model:
        return LearnedScore(_load_model(args.model, len(mu_shape)))
    if args.clean:
        x0 = _read_input(args.clean)
        if x0.shape != mu_shape:
            raise UsageError(f"--clean shape {x0.shape} does not match input shape {mu_shape}")
        return ExactScore(x0)
    raise UsageError("a score source is required: --model CHECKPOINT or --clean REFERENCE")


# -- commands ----------------------------------------------------------------

def cmd_validate(args, cfg) -> int:
    results = run_checks(sde_config(cfg), only=args.only, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.group:<10} {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_make_data(args, cfg) -> int:
    d = cfg["data"]
    samples = make_dataset(d["task"], int(d["n_train"]), tuple(d["shape"]), int(d["master_seed"]), d["params"] or None)
    out = save_dataset(args.out, samples, int(cfg["io"]["pgm_maxval"]))
    write_manifest(out / "run_manifest.json", "make-data", args, cfg, int(d["master_seed"]), [out / "manifest.json"])
    print(f"wrote {len(samples)} {d['task']} pairs to {out}")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    sde = sde_config(cfg)
    x0 = _read_input(args.input)
    mu = _read_input(args.mu)
    if x0.shape != mu.shape:
        raise UsageError(f"input shape {x0.shape} does not match mu shape {mu.shape}")
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    every = args.every or int(cfg["io"]["snapshot_every"])
    maxval = int(cfg["io"]["pgm_maxval"])
    x = x0.copy()
    written = []
    rows = []
    for i in range(sde.T + 1):
        if i > 0:
            k = transition_stats(x, i - 1, i, mu, sde)
            x = k.mean + math.sqrt(k.variance) * rng.standard_normal(x.shape)
        m = transition_stats(x0, 0, i, mu, sde)
        resid = x - m.mean
        rows.append([i, repr(float(sde.theta_bar[i])), repr(float(np.mean(m.mean))), repr(float(m.variance)),
                     repr(float(resid.mean())), repr(float(resid.var()))])
        if i % every == 0 or i == sde.T:
            p = out / f"step_{i:04d}.{_ext(x)}"
            write_state(p, x, maxval)
            written.append(p)
    stats = out / "forward_stats.csv"
    with open(stats, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "theta_bar", "mean", "variance", "empirical_mean_residual", "empirical_variance"])
        w.writerows(rows)
    written.append(stats)
    write_manifest(out / "run_manifest.json", "simulate", args, cfg, args.seed, written)
    print(f"wrote {len(written) - 1} snapshots and {stats}")
    return EXIT_OK


def cmd_restore(args, cfg) -> int:
    sde = sde_config(cfg)
    mu = _read_input(args.mu)
    source = _score_source(args, mu.shape)
    rng = np.random.default_rng(args.seed)
    if args.input:
        x_T = _read_input(args.input)
        if x_T.shape != mu.shape:
            raise UsageError(f"input shape {x_T.shape} does not match mu shape {mu.shape}")
    else:
        x_T = terminal_state(mu, sde, rng)
    traj = restore(x_T, mu, source, args.mode, sde, rng if args.mode == "sde" else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    every = args.every or int(cfg["io"]["snapshot_every"])
    maxval = int(cfg["io"]["pgm_maxval"])
    written = _write_snapshots(out, traj.states, sde.T, every, maxval)
    final = out / f"restored.{_ext(mu)}"
    write_state(final, traj.final, maxval)
    log = out / "step_log.csv"
    write_step_log(log, traj.step_logs)
    written += [final, log]
    write_manifest(out / "run_manifest.json", "restore", args, cfg, args.seed, written)
    if traj.step_logs and traj.step_logs[-1].psnr is not None:
        print(f"final PSNR {traj.step_logs[-1].psnr:.2f} dB")
    print(f"wrote {final} and {log}")
    return EXIT_OK


def cmd_denoise(args, cfg) -> int:
    sde = sde_config(cfg)
    y = _read_input(args.input)
    source = _score_source(args, y.shape)
    sigma = args.sigma / 255.0
    if args.start == "auto":
        start = t_star(sigma, sde)
    else:
        try:
            start = int(args.start)
        except ValueError:
            raise UsageError(f"--start must be 'auto' or an integer, got {args.start!r}") from None
        sde.check_index(start)
    rng = np.random.default_rng(args.seed)
    traj = denoise(y, start, source, args.mode, sde, rng if args.mode == "sde" else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maxval = int(cfg["io"]["pgm_maxval"])
    final = out / f"denoised.{_ext(y)}"
    write_state(final, traj.final, maxval)
    log = out / "step_log.csv"
    write_step_log(log, traj.step_logs)
    write_manifest(out / "run_manifest.json", "denoise", args, cfg, args.seed, [final, log])
    print(f"start index {start}; wrote {final}")
    return EXIT_OK


def _eval_pairs(args, cfg):
    if args.data:
        return load_dataset(args.data)
    d = cfg["data"]
    return make_dataset(d["task"], int(d["n_eval"]), tuple(d["shape"]), int(d["eval_seed"]), d["params"] or None)


def cmd_train(args, cfg) -> int:
    sde = sde_config(cfg)
    hp = train_config(cfg)
    objective = canonical_objective(cfg["train"]["objective"])
    seed = int(cfg["train"]["seed"])
    d = cfg["data"]
    if args.data:
        dataset = load_dataset(args.data)
    else:
        dataset = make_dataset(d["task"], int(d["n_train"]), tuple(d["shape"]), int(d["master_seed"]),
                               d["params"] or None)
    if len(hp.patch) != dataset[0].x0.ndim:
        raise UsageError(f"model.patch {hp.patch} does not match {dataset[0].x0.ndim}-d data")
    eval_pairs = None
    if int(d["n_eval"]) > 0 and hp.eval_every:
        eval_pairs = make_dataset(d["task"], int(d["n_eval"]), tuple(d["shape"]), int(d["eval_seed"]),
                                  d["params"] or None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    loss_path = out / "loss.csv"
    ckpt = out / "model.irsde"
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "loss", "psnr_eval"])

        def stream(it, loss, score):
            w.writerow([it, objective, repr(float(loss)), "" if score is None else repr(float(score))])
            if score is not None:
                fh.flush()
                if not args.quiet:
                    print(f"iter {it:6d}  loss {loss:.5g}  eval PSNR {score:.2f} dB", file=sys.stderr)

        result = train(dataset, objective, sde, hp, np.random.default_rng(seed), eval_pairs=eval_pairs,
                       callback=stream)
    result.model.save(ckpt)
    write_manifest(out / "run_manifest.json", "train", args, cfg, seed, [loss_path, ckpt])
    print(f"wrote {loss_path} and {ckpt}")
    return EXIT_OK


def _eval_one(job):
    """Metrics for one pair under every requested method (runs in worker processes)."""
    k, pair, methods, mode, sde, seed, model_path = job
    model = ScoreModel.load(model_path) if model_path else None
    rows = []
    for method in methods:
        if method == "identity":
            out = pair.mu
        else:
            rng = np.random.default_rng([seed, k])
            source = ExactScore(pair.x0) if method == "exact" else LearnedScore(model)
            x_T = terminal_state(pair.mu, sde, rng)
            out = restore(x_T, pair.mu, source, mode, sde, rng, bound=None).final
            out = np.clip(out, 0.0, 1.0)
        try:
            s = ssim(out, pair.x0)
        except ValueError:
            s = math.nan
        rows.append([pair.id, pair.degradation_tag, method, repr(psnr(out, pair.x0)), repr(s),
                     repr(mse(out, pair.x0))])
    return rows


def cmd_eval(args, cfg) -> int:
    sde = sde_config(cfg)
    pairs = _eval_pairs(args, cfg)
    methods = args.methods or (["identity", "exact"] + (["learned"] if args.model else []))
    if "learned" in methods:
        if not args.model:
            raise UsageError("method 'learned' needs --model")
        _load_model(args.model, pairs[0].x0.ndim)
    jobs = [(k, p, methods, args.mode, sde, args.seed, args.model) for k, p in enumerate(pairs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for rows in results:
            w.writerows(rows)
    write_manifest(out.with_suffix(".manifest.json"), "eval", args, cfg, args.seed, [out])
    for m in methods:
        vals = [float(r[3]) for rows in results for r in rows if r[2] == m]
        print(f"{m:<10} mean PSNR {np.mean(vals):.2f} dB over {len(vals)} pairs")
    return EXIT_OK


def cmd_plot(args, cfg) -> int:
    for p in args.csv:
        if not Path(p).exists():
            raise UsageError(f"{p} does not exist")
    out = plot_csv(args.csv, args.out)
    print(f"wrote {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _json_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config with sections sde/schedule/model/train/data/io")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry (value parsed as JSON)")

    parser = argparse.ArgumentParser(prog="irsde", description="Mean-reverting SDE restoration toolkit")
    parser.add_argument("--version", action="version", version=f"irsde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="run the oracle self-check suite")
    p.add_argument("--only", action="append", choices=sorted(GROUPS), help="run only this group (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("make-data", parents=[common], help="generate a synthetic paired dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--n", type=int, help="number of pairs (data.n_train)")
    p.add_argument("--seed", type=int, help="master seed (data.master_seed)")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("simulate", parents=[common], help="run the forward process and save snapshots")
    p.add_argument("--input", type=Path, required=True, help="clean state x0")
    p.add_argument("--mu", type=Path, required=True, help="degraded state mu")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--every", type=int, help="snapshot interval (io.snapshot_every)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    for name, helptext in (("restore", "reverse the SDE/ODE from mu back to a clean estimate"),
                           ("denoise", "denoise an image starting at the matched noise level")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        src = p.add_argument_group("score source")
        src.add_argument("--model", type=Path, help="trained checkpoint")
        src.add_argument("--clean", type=Path, help="clean reference; uses the exact score")
        p.add_argument("--mode", choices=("sde", "ode"), default="sde")
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--seed", type=int, default=0)
        if name == "restore":
            p.add_argument("--mu", type=Path, required=True, help="degraded state")
            p.add_argument("--input", type=Path, help="starting state x_T (default: sampled around mu)")
            p.add_argument("--every", type=int, help="snapshot interval (io.snapshot_every)")
            p.set_defaults(func=cmd_restore)
        else:
            p.add_argument("--input", type=Path, required=True, help="noisy observation")
            p.add_argument("--sigma", type=float, required=True, help="noise level in 8-bit units")
            p.add_argument("--start", default="auto", help="'auto' or a step index")
            p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", parents=[common], help="train the patch noise predictor")
    p.add_argument("--objective", help="noise_matching|max_likelihood (or nm|ml)")
    p.add_argument("--seed", type=int, help="training seed (train.seed)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--data", type=Path, help="dataset directory (default: generate from data section)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score restoration methods into a metrics CSV")
    p.add_argument("--data", type=Path, help="dataset directory (default: generate data.n_eval pairs)")
    p.add_argument("--model", type=Path)
    p.add_argument("--methods", nargs="+", choices=("identity", "exact", "learned"))
    p.add_argument("--mode", choices=("sde", "ode"), default="sde")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-image work")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", parents=[common], help="render loss or step-log CSVs to SVG")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def _overrides(args) -> dict:
    over: dict = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        set_dotted(over, key, _json_value(value))
    flag_map = {"task": "data.task", "n": "data.n_train", "objective": "train.objective",
                "iterations": "train.iterations"}
    for flag, dotted in flag_map.items():
        if getattr(args, flag, None) is not None:
            set_dotted(over, dotted, getattr(args, flag))
    if args.command == "make-data" and args.seed is not None:
        set_dotted(over, "data.master_seed", args.seed)
    if args.command == "train" and args.seed is not None:
        set_dotted(over, "train.seed", args.seed)
    return over


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "train":
            canonical_objective(cfg["train"]["objective"])
        return args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"irsde {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, TrainingDivergedError, DegenerateVarianceError, FloatingPointError) as exc:
        print(f"irsde {args.command}: aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, UsageError, EmptyPlotError, ValueError) as exc:
        print(f"irsde {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"irsde {args.command}: I/O failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
