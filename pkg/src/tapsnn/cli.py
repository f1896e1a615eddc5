"""Command-line front end: train | eval | energy | analyze | ablate.

Artifacts land in ``<out>/<experiment>/<seed>/`` as a learning-curve CSV, a
binary checkpoint of every network, and a config snapshot that reproduces
the run byte-for-byte. The output root defaults to ``$TAPSNN_RUNS`` or
``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .config import RunConfig
from .energy import estimate, format_table, write_report_csv
from .envs import make
from .network import load_checkpoint, save_checkpoint
from .rl.loops import build_trainer, evaluate, train


def runs_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("TAPSNN_RUNS", "runs"))


def parse_seeds(spec: str) -> list[int]:
    """Accepts '0..4' ranges (inclusive) and '0,1,2' lists."""
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s != ""]


def trainer_named_parameters(trainer):
    named = []
    for net_name, policy in trainer.networks().items():
        named += [(f"{net_name}.{n}", p) for n, p in policy.named_parameters()]
    return named


def run_dir_for(cfg: RunConfig, root: Path, exp: str | None) -> Path:
    name = exp or f"{cfg.env}-{cfg.cell}" + ("" if cfg.tap else f"-notap{cfg.t_inner}")
    return root / name / str(cfg.seed)


def train_one(cfg: RunConfig, out_dir: Path, quiet: bool = False) -> float:
    """One seed: train, then write curve.csv, ckpt.bin and config.snapshot."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.snapshot").write_text(cfg.stamped().to_text())

    def progress(step, mean):
        if not quiet:
            print(f"[{cfg.env} {cfg.cell} seed {cfg.seed}] step {step}: eval {mean:.1f}",
                  flush=True)

    result = train(cfg.env, cfg.train_config(), cfg.seed, cell=cfg.cell,
                   aligned=cfg.tap, t_inner=cfg.t_inner, progress=progress)
    with open(out_dir / "curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "seed", "mean_return", "std_return"])
        for step, mean, std in result.curve:
            writer.writerow([step, cfg.seed, f"{mean:.6f}", f"{std:.6f}"])
    save_checkpoint(out_dir / "ckpt.bin", trainer_named_parameters(result.trainer))
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "final_score", "env_steps", "cell_updates",
                         "wall_seconds"])
        writer.writerow([cfg.seed, f"{result.final_score:.6f}", result.env_steps,
                         result.cell_updates, f"{result.wall_seconds:.1f}"])
    if not quiet:
        print(f"[{cfg.env} {cfg.cell} seed {cfg.seed}] final {result.final_score:.1f} "
              f"({result.wall_seconds:.0f}s)", flush=True)
    return result.final_score


def load_run(run_dir: Path):
    """Rebuild the trainer recorded in a run directory and load its weights."""
    snapshot = run_dir / "config.snapshot"
    if not snapshot.exists():
        raise FileNotFoundError(f"no config.snapshot under {run_dir}")
    cfg = RunConfig.from_text(snapshot.read_text())
    trainer = build_trainer(cfg.env, cfg.train_config(), np.random.default_rng(cfg.seed),
                            cell=cfg.cell, aligned=cfg.tap, t_inner=cfg.t_inner)
    ckpt = run_dir / "ckpt.bin"
    if not ckpt.exists():
        raise FileNotFoundError(f"no ckpt.bin under {run_dir}")
    tensors = load_checkpoint(ckpt)
    for net_name, policy in trainer.networks().items():
        prefix = net_name + "."
        policy.load_state({k[len(prefix):]: v for k, v in tensors.items()
                           if k.startswith(prefix)})
    return trainer, cfg


def seed_dirs(exp_dir: Path) -> list[Path]:
    dirs = sorted((d for d in exp_dir.iterdir() if d.is_dir() and d.name.isdigit()),
                  key=lambda d: int(d.name))
    if not dirs:
        raise FileNotFoundError(f"no seed directories under {exp_dir}")
    return dirs


# -- commands -----------------------------------------------------------------


# (flag name, RunConfig field, argparse default) — None means "not provided"
_TRAIN_FLAGS = [("env", "env", None), ("cell", "cell", "grsn"),
                ("t_inner", "t_inner", 4), ("steps", "steps", None),
                ("lr", "lr", 3e-4), ("gamma", "gamma", 0.9),
                ("tau", "tau", 0.005), ("batch_size", "batch_size", 32),
                ("seq_len", "seq_len", 64), ("warmup", "warmup_steps", 1000),
                ("updates_per_step", "updates_per_step", 1.0),
                ("eval_interval", "eval_interval_episodes", None),
                ("eval_episodes", "eval_episodes", 10)]


def _config_from_args(args) -> RunConfig:
    pendulum = args.env.startswith("Pendulum")
    if args.config:
        base = RunConfig.from_text(Path(args.config).read_text())
        for flag, field, default in _TRAIN_FLAGS:  # explicit flags win over the file
            value = getattr(args, flag)
            if value is not None and value != default:
                setattr(base, field, value)
        if args.no_tap:
            base.tap = False
        return base
    kwargs = {field: getattr(args, flag) for flag, field, _ in _TRAIN_FLAGS}
    if kwargs["steps"] is None:
        kwargs["steps"] = 50_000 if pendulum else 10_000
    if kwargs["eval_interval_episodes"] is None:
        kwargs["eval_interval_episodes"] = 5 if pendulum else 1
    return RunConfig(tap=not args.no_tap, **kwargs)


def cmd_train(args) -> int:
    seeds = parse_seeds(args.seeds)
    root = runs_root(args.out)
    base = _config_from_args(args)
    jobs = []
    for seed in seeds:
        cfg = RunConfig(**{**base.__dict__, "seed": seed, "version": "", "git_commit": ""})
        jobs.append((cfg, run_dir_for(cfg, root, args.exp_name)))
    if args.workers > 1 and len(jobs) > 1:
        procs: list[tuple[subprocess.Popen, RunConfig]] = []
        pending = list(jobs)
        failures = 0
        while pending or procs:
            while pending and len(procs) < args.workers:
                cfg, out_dir = pending.pop(0)
                out_dir.mkdir(parents=True, exist_ok=True)
                cmd = [sys.executable, "-m", "tapsnn.cli", "train",
                       "--seeds", str(cfg.seed), "--out", str(root),
                       "--workers", "1", "--quiet"]
                for flag, field, _ in _TRAIN_FLAGS:
                    cmd += [f"--{flag.replace('_', '-')}", str(getattr(cfg, field))]
                if args.exp_name:
                    cmd += ["--exp-name", args.exp_name]
                if not cfg.tap:
                    cmd += ["--no-tap"]
                log = open(out_dir / "train.log", "w")
                procs.append((subprocess.Popen(cmd, stdout=log, stderr=subprocess.STDOUT),
                              cfg))
            done = [(p, c) for p, c in procs if p.poll() is not None]
            for p, c in done:
                procs.remove((p, c))
                if p.returncode != 0:
                    failures += 1
                    print(f"seed {c.seed} FAILED (rc {p.returncode})", file=sys.stderr)
            if procs:
                time.sleep(2.0)
        return 1 if failures else 0
    for cfg, out_dir in jobs:
        train_one(cfg, out_dir, quiet=args.quiet)
    return 0


def cmd_eval(args) -> int:
    exp_dir = Path(args.run_dir)
    finals = []
    rows = []
    for sd in seed_dirs(exp_dir):
        trainer, cfg = load_run(sd)
        result = evaluate(trainer.actor, cfg.env, n_episodes=args.episodes,
                          seed=args.seed)
        finals.append(result.mean_return)
        rows.append((cfg.seed, result.mean_return, result.std_return))
        print(f"seed {cfg.seed}: {result.mean_return:.1f} +- {result.std_return:.1f}")
    arr = np.asarray(finals)
    print(f"{exp_dir.name}: {arr.mean():.1f} +- {arr.std():.2f} over {len(arr)} seeds")
    with open(exp_dir / "eval.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "mean_return", "std_return"])
        for seed, mean, std in rows:
            writer.writerow([seed, f"{mean:.6f}", f"{std:.6f}"])
    return 0


def cmd_energy(args) -> int:
    baseline_trainer, baseline_cfg = load_run(Path(args.baseline_dir))
    target_trainer, target_cfg = load_run(Path(args.run_dir))
    baseline = estimate(baseline_trainer.networks(), baseline_cfg.env,
                        n_samples=args.samples, seed=args.seed,
                        name=f"{baseline_cfg.env}-{baseline_cfg.cell}")
    target = estimate(target_trainer.networks(), target_cfg.env,
                      n_samples=args.samples, seed=args.seed,
                      name=f"{target_cfg.env}-{target_cfg.cell}", baseline=baseline)
    print(format_table([baseline, target]))
    out = Path(args.out) if args.out else Path(args.run_dir) / "energy.csv"
    write_report_csv(out, [baseline, target])
    print(f"wrote {out}")
    return 0


def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []

    def check(name, fn):
        try:
            fn()
            print(f"PASS {name}")
        except Exception as exc:  # report every failed bound, then exit nonzero
            failures.append(name)
            print(f"FAIL {name}: {exc}")

    report = {}
    check("factor-bounds-and-extrema",
          lambda: report.update(analysis.verify_factor_bounds(seed=args.seed)))

    def product_bound():
        rng = np.random.default_rng(args.seed)
        bound = analysis.HARD_FACTOR_BOUND**64
        for _ in range(2000):
            us = rng.uniform(-10, 10, 64)
            assert abs(analysis.product_decay(us, "hard")) <= bound
            assert abs(analysis.product_decay(us, "soft")) <= 0.5**64
        assert bound < 1e-18

    check("history-product-vanishes", product_bound)

    def oracle():
        rng = np.random.default_rng(args.seed + 1)
        for T in (1, 2, 4, 8, 16):
            for _ in range(10):
                W = rng.uniform(-1, 1, (4, 6))
                b = rng.uniform(-0.3, 0.3, 6)
                analysis.closed_form_gradient(W, b, rng.uniform(-2, 2, (T, 4)))

    check("closed-form-gradient-oracle", oracle)

    def capture():
        if args.run_dir:
            trainer, cfg = load_run(Path(args.run_dir))
            policy, env_id = trainer.actor, cfg.env
        else:
            from .network import PolicySpec, TapPolicy

            env_id = "CartPole-V"
            policy = TapPolicy(PolicySpec(obs_dim=2, act_dim=2, discrete=True,
                                          head="actor", cell_kind="grsn"),
                               np.random.default_rng(args.seed))
        trace = analysis.capture_distributions(policy, make(env_id),
                                               n_episodes=args.episodes,
                                               seed=args.seed)
        trace.write_histograms(out / "distributions.csv")
        assert trace.abs_factor_max() < 1.0, "a scaled reset factor reached 1"
        mode = trace.potential_mode()
        print(f"  potential mode {mode:+.2f} "
              f"({'inside' if abs(mode) <= 0.5 else 'outside'} [-0.5, 0.5])")

    check("factor-distributions-below-one", capture)

    with open(out / "extrema.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "value"])
        for key, value in report.items():
            writer.writerow([key, f"{value:.6f}"])
    print(f"wrote {out / 'extrema.csv'}")
    return 1 if failures else 0


def cmd_ablate(args) -> int:
    root = runs_root(args.out)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in parse_seeds(args.seeds):
        for mode, tap in (("tap", True), (f"rate{args.t_inner}", False)):
            cfg = RunConfig(env=args.env, cell=args.cell, tap=tap,
                            t_inner=args.t_inner, seed=seed, steps=args.steps,
                            eval_interval_episodes=10**9)
            result = train(cfg.env, cfg.train_config(), seed, cell=cfg.cell,
                           aligned=tap, t_inner=args.t_inner)
            rows.append([mode, seed, result.env_steps, result.cell_updates,
                         f"{result.wall_seconds:.2f}", f"{result.final_score:.2f}"])
            print(f"{mode} seed {seed}: {result.cell_updates} cell updates, "
                  f"{result.wall_seconds:.1f}s, final {result.final_score:.1f}")
    path = root / f"ablate-{args.env}-{args.cell}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "seed", "env_steps", "cell_updates",
                         "wall_seconds", "final_score"])
        writer.writerows(rows)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapsnn",
                                     description="temporally aligned spiking RL")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or more seeds")
    p.add_argument("--env", required=True)
    p.add_argument("--cell", default="grsn", choices=["grsn", "lif", "gru", "mlp"])
    p.add_argument("--no-tap", action="store_true",
                   help="rate-coded ablation mode (repeated input, inner window)")
    p.add_argument("--t-inner", type=int, default=4)
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--exp-name", default=None)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--tau", type=float, default=0.005)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--updates-per-step", type=float, default=1.0)
    p.add_argument("--eval-interval", type=int, default=None)
    p.add_argument("--eval-episodes", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="aggregate final evaluations over seeds")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=990_000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("energy", help="energy report vs a baseline run")
    p.add_argument("--run-dir", required=True, help="seed dir of the target run")
    p.add_argument("--baseline-dir", required=True, help="seed dir of the baseline")
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("analyze", help="verify the gradient-decay theory numerically")
    p.add_argument("--out", default="analysis-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--run-dir", default=None,
                   help="optional trained run to instrument instead of a fresh policy")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="aligned vs rate-coded on identical budgets")
    p.add_argument("--env", required=True)
    p.add_argument("--cell", default="grsn", choices=["grsn", "lif"])
    p.add_argument("--t-inner", type=int, default=4)
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
