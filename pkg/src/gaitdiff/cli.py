"""Command-line entry points: gen-data, train, rollout, bench, eval."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import _accel
from . import checkpoint as ckpt_io
from .bench import latency_vs_steps
from .dataset import load_dataset, save_dataset, export_csv, split_train_val
from .ddpm import Sampler, SamplerMode, TrainConfig, evaluate_loss, train
from .policy import PolicyConfig, normalize_action, normalize_observation
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS, linear_schedule
from . import surrogate as sg

log = logging.getLogger("gaitdiff")


class CLIError(Exception):
    pass


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON file of option defaults (keys = option names)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _sampling(p):
    p.add_argument("--mode", choices=[m.value for m in SamplerMode], default=SamplerMode.ANCESTRAL.value)
    p.add_argument("--warm-start", action="store_true",
                   help="reuse one initial noise draw for every control step")


def build_parser():
    ap = argparse.ArgumentParser(prog="gaitdiff", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll the surrogate expert and write a BRDF dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=["gait", "bimodal"], default="gait")
    p.add_argument("--pairs", type=int, default=60000, help="total pairs for the default recipe")
    p.add_argument("--recipe", metavar="PATH", help="recipe file; overrides --pairs")
    p.add_argument("--episode-steps", type=int, default=250)
    p.add_argument("--action-noise", type=float, default=0.02)
    p.add_argument("--csv", metavar="PATH", help="also export the dataset as CSV")

    p = sub.add_parser("train", help="train a diffusion policy on a BRDF dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--epochs", type=int, default=10000)
    p.add_argument("--batch", type=int, default=4000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--save-every", type=int, default=1000)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--T", type=int, default=DEFAULT_STEPS)
    p.add_argument("--beta-start", type=float, default=DEFAULT_BETA_START)
    p.add_argument("--beta-end", type=float, default=DEFAULT_BETA_END)
    p.add_argument("--latent-dim", type=int, default=48)
    p.add_argument("--enc-hidden", type=int, default=48)
    p.add_argument("--enc-layers", type=int, default=3)
    p.add_argument("--den-hidden", type=int, default=256)
    p.add_argument("--den-layers", type=int, default=7)
    p.add_argument("--temb-dim", type=int, default=128)

    p = sub.add_parser("rollout", help="closed-loop rollout, or bimodal sampling for 1-D policies")
    _common(p)
    _sampling(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--velocity", type=float, default=1.0)
    p.add_argument("--slope-deg", type=float, default=5.7)
    p.add_argument("--roughness", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--bimodal", action="store_true", help="sample 1000 actions from a toy policy")
    p.add_argument("--out", metavar="CSV")

    p = sub.add_parser("bench", help="single-thread sampling latency")
    _common(p)
    _sampling(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--deadline-ms", type=float, default=20.0)
    p.add_argument("--float32", action="store_true", help="down-convert weights for inference")
    p.add_argument("--backend", choices=["numba", "numpy"], default=None)
    p.add_argument("--compare-steps", type=int, default=1, metavar="T",
                   help="also time this diffusion length for the linear-scaling ratio (0 = skip)")

    p = sub.add_parser("eval", help="train/val denoising MSE of a checkpoint")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", type=float, default=None, help="defaults to the checkpoint's split")
    return ap


def parse_args(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        overrides = json.loads(Path(args.config).read_text())
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        bad = set(k.replace("-", "_") for k in overrides) - known
        if bad:
            raise CLIError(f"unknown keys in {args.config}: {sorted(bad)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = ap.parse_args(argv)
    return args


def manifest(args, extra=None):
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    items["backend"] = _accel.backend_name()
    if extra:
        items.update(extra)
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def _emit_manifest(args, path=None, extra=None):
    text = manifest(args, extra)
    sys.stdout.write("# run manifest\n" + text)
    if path is not None:
        Path(path).write_text(text)


def _check_out(path, force):
    if Path(path).exists() and not force:
        raise CLIError(f"{path} exists; pass --force to overwrite")


def cmd_gen_data(args):
    _check_out(args.out, args.force)
    _emit_manifest(args, f"{args.out}.manifest.txt")
    if args.task == "bimodal":
        ds = sg.bimodal_dataset(args.pairs, seed=args.seed)
    else:
        if args.recipe:
            recipe = sg.parse_recipe(Path(args.recipe).read_text())
        else:
            recipe = sg.default_recipe(args.pairs)
        ds = sg.gen_dataset(recipe, seed=args.seed, episode_steps=args.episode_steps,
                            action_noise=args.action_noise)
    save_dataset(ds, args.out)
    if args.csv:
        export_csv(ds, args.csv)
    print(json.dumps({"out": args.out, "n": ds.n, "obs_dim": ds.obs_dim, "act_dim": ds.act_dim}))
    return 0


def cmd_train(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if (out / "last.brck").exists() and not (args.force or args.resume):
        raise CLIError(f"{out} already holds a run; pass --force or --resume")
    ds = load_dataset(args.data, obs_dim=None, act_dim=None)
    resume = ckpt_io.load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        s, pcfg = resume.schedule, resume.policy.config
        normalize = resume.normalize
    else:
        s = linear_schedule(args.T, args.beta_start, args.beta_end)
        pcfg = PolicyConfig(ds.obs_dim, ds.act_dim, args.latent_dim, args.enc_hidden,
                            args.enc_layers, args.den_hidden, args.den_layers, args.temb_dim)
        normalize = not args.no_normalize
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed,
                      normalize=normalize, split_ratio=args.split, save_every=args.save_every,
                      eval_every=args.eval_every)
    _emit_manifest(args, out / "manifest.txt",
                   {"schedule": s.params(), "policy": pcfg.to_dict(), "n_pairs": ds.n})
    res = train(ds, pcfg, s, cfg, out_dir=str(out), resume=resume,
                metrics_path=out / "metrics.csv")
    last = res.reports[-1] if res.reports else None
    print(json.dumps({"epochs_run": len(res.reports), "checkpoints": res.checkpoints,
                      "train_loss": last.mean_batch_loss if last else None,
                      "val_loss": last.val_loss if last else None}))
    return 0


def _cfg_terrain(args):
    return sg.gait_config(args.velocity), sg.TerrainParams.from_degrees(args.slope_deg, args.roughness)


def cmd_rollout(args):
    ck = ckpt_io.load_checkpoint(args.ckpt)
    _emit_manifest(args)
    sampler = Sampler(ck.policy, ck.schedule, ck.norm, mode=args.mode, warm_start=args.warm_start)
    if args.bimodal:
        rng = np.random.default_rng(args.seed)
        cond, _ = sg.bimodal_sample(rng, 1000)
        samples = np.array([sampler.sample(c, rng)[0] for c in cond])
        neg, pos, mid = sg.bimodal_eval(samples)
        if args.out:
            _check_out(args.out, args.force)
            np.savetxt(args.out, samples, delimiter=",", header="action", comments="")
        print(json.dumps({"mass_neg": neg, "mass_pos": pos, "mass_middle": mid, "mode": args.mode}))
        return 0
    cfg, terrain = _cfg_terrain(args)
    res = sg.eval_tracking(sampler, cfg, terrain, steps=args.steps, seed=args.seed)
    if args.out:
        _check_out(args.out, args.force)
        res.record.write_csv(args.out)
    lat = np.asarray(res.record.latencies) * 1e3
    print(json.dumps({"rmse": res.rmse, "fell": res.fell, "steps": res.steps,
                      "reason": res.record.reason, "mode": args.mode,
                      "velocity": args.velocity, "slope_deg": args.slope_deg,
                      "latency_ms_p50": float(np.percentile(lat, 50))}))
    return 0


def cmd_bench(args):
    if not Path(args.ckpt).exists():
        raise CLIError(f"checkpoint {args.ckpt} not found")
    ck = ckpt_io.load_checkpoint(args.ckpt)
    dtype = np.float32 if args.float32 else np.float64
    _emit_manifest(args, extra={"inference_dtype": np.dtype(dtype).name,
                                "schedule": ck.schedule.params()})
    obs = np.random.default_rng(args.seed).standard_normal(ck.policy.config.obs_dim)
    if ck.norm is not None:
        obs = ck.norm.obs_mean + ck.norm.obs_std * obs
    steps = [ck.schedule.T]
    if args.compare_steps and args.compare_steps != ck.schedule.T:
        steps.insert(0, args.compare_steps)
    reports = latency_vs_steps(ck.policy, ck.norm, obs, steps, args.trials, args.warmup,
                               args.seed, args.mode, args.backend, dtype,
                               ck.schedule.beta_start, ck.schedule.beta_end, args.deadline_ms)
    main = reports[ck.schedule.T]
    out = {"report": main.to_dict()}
    if len(steps) > 1:
        short = reports[steps[0]]
        out["compare"] = short.to_dict()
        out["ratio_p50"] = main.p50 / short.p50
    print(json.dumps(out))
    return 0 if main.passed else 1


def cmd_eval(args):
    ck = ckpt_io.load_checkpoint(args.ckpt)
    ds = load_dataset(args.data, obs_dim=ck.policy.config.obs_dim, act_dim=ck.policy.config.act_dim)
    ratio = args.split
    if ratio is None:
        ratio = ck.extra.get("train", {}).get("split_ratio", 0.8)
    seed = ck.extra.get("train", {}).get("seed", ck.seed)
    _emit_manifest(args, extra={"split_ratio": ratio, "split_seed": seed})
    split = split_train_val(ds.n, ratio, seed)
    obs, act = ds.observations, ds.actions
    if ck.norm is not None:
        obs, act = normalize_observation(obs, ck.norm), normalize_action(act, ck.norm)
    tr = evaluate_loss(ck.policy, ck.schedule, obs[split.train_rows], act[split.train_rows])
    va = evaluate_loss(ck.policy, ck.schedule, obs[split.val_rows], act[split.val_rows])
    print(json.dumps({"epoch": ck.epoch, "train_mse": tr, "val_mse": va,
                      "val_over_train": va / tr if tr > 0 else math.inf,
                      "n_train": len(split.train_rows), "n_val": len(split.val_rows)}))
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "rollout": cmd_rollout,
            "bench": cmd_bench, "eval": cmd_eval}


def main(argv=None):
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (CLIError, ValueError, FileNotFoundError) as exc:
        print(f"gaitdiff: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
