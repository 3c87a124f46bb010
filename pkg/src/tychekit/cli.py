"""Command line interface.

Verbs::

    tychekit generate-data  --config C [--out DIR]
    tychekit train          --config C
    tychekit evaluate       --config C [--mode tyche|ictta]
    tychekit predict        --checkpoint F --episode DIR --out DIR [--mode] [--k] [--seed]
    tychekit study          --config C [--kind K] [--grid ...]
    tychekit report         --run-dir DIR

Outputs land in ``<runs-root>/<config hash>/``; the hash covers the config
sections that determine the trained model, so ``train``, ``evaluate`` and
``study`` on the same config share a run directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import ContractViolation
from .harness.checkpoint import Checkpoint, CheckpointError
from .harness.config import ConfigError, dump_toml, load_config
from .harness.episode_io import EpisodeFormatError, load_episode, write_predictions
from .harness.evaluation import (
    ICTTASampler,
    TycheSampler,
    collect_candidates,
    read_csv,
    score_draws,
    write_aggregate,
    write_csv,
)
from .harness.study import load_study, run_study, save_study
from .harness.training import (
    TRAIN_SECTIONS,
    TrainingDiverged,
    configure_determinism,
    dataset_from_config,
    train,
)
from .model import count_parameters
from .seeding import derive_seed
from .synthdata import load_dataset, save_dataset

log = logging.getLogger("tychekit")

REFERENCE_PARAMS = 1.7e6  # published size of the full-scale network


def run_dir_for(cfg, runs_root) -> Path:
    return Path(runs_root) / cfg.hash(TRAIN_SECTIONS)


def _dataset(cfg, data_dir):
    if data_dir:
        return load_dataset(data_dir)
    return dataset_from_config(cfg)


def _load_trained(cfg, args):
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else (
        run_dir_for(cfg, args.runs_root) / "checkpoint.tyck"
    )
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path} (run `tychekit train` first)")
    return Checkpoint.load(path).build_model()


def _sampler(model, cfg, mode, seed):
    if mode == "tyche":
        return TycheSampler(model, noise=cfg.eval.noise, seed=seed), cfg.eval.k
    base = TycheSampler(model, noise="zero", seed=seed).deterministic()
    ic = cfg.ictta
    return ICTTASampler(base, ic.family, ic.include_identity, seed, ic.per_image), ic.k


def _print_table(rows, header):
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(v) for v in row))


def _aggregate_rows(section, point, aggregates):
    return [
        (section, point, m, f"{a['mean']:.6f}", f"{a['ci95']:.6f}", a["n"])
        for m, a in sorted(aggregates.items())
    ]


TABLE_HEADER = ("section", "point", "metric", "mean", "ci95", "n")


def cmd_generate_data(args):
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(args.runs_root) / f"data-{cfg.hash(['data'])}"
    dataset = dataset_from_config(cfg)
    save_dataset(dataset, out)
    for tid in sorted(dataset.tasks):
        sizes = {k: len(v) for k, v in dataset.splits[tid].items()}
        print(f"{tid}\tdev={sizes['dev']}\tval={sizes['val']}\ttest={sizes['test']}")
    print(f"dataset written to {out}")


def cmd_train(args):
    cfg = load_config(args.config)
    run_dir = run_dir_for(cfg, args.runs_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(dump_toml(cfg))
    dataset = _dataset(cfg, args.data)
    init = Checkpoint.load(args.init) if args.init else None
    result = train(cfg, dataset, run_dir=run_dir, init=init)
    n_params = count_parameters(result.model)
    summary = {
        "config_hash": cfg.hash(TRAIN_SECTIONS),
        "epochs": len(result.loss_curve),
        "epoch_losses": result.loss_curve,
        "val_curve": result.val_curve,
        "parameters": n_params,
        "reference_parameters": REFERENCE_PARAMS,
    }
    (run_dir / "train.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if result.step_losses:
        from .plotting import plot_loss_curve

        plot_loss_curve(result.step_losses, run_dir / "loss_curve.png", result.loss_curve)
    first = result.loss_curve[0] if result.loss_curve else float("nan")
    last = result.loss_curve[-1] if result.loss_curve else float("nan")
    print(f"epochs\t{len(result.loss_curve)}\tloss_first\t{first:.6f}\tloss_last\t{last:.6f}")
    print(f"parameters\t{n_params}\treference\t{REFERENCE_PARAMS:.0f}")
    print(f"run directory {run_dir}")


def cmd_evaluate(args):
    cfg = load_config(args.config)
    configure_determinism()
    mode = args.mode or cfg.eval.mode
    model = _load_trained(cfg, args)
    dataset = _dataset(cfg, args.data)
    seed = derive_seed(cfg.seed, "eval")
    sampler, k = _sampler(model, cfg, mode, seed)
    e = cfg.eval
    draws = collect_candidates(sampler, dataset, e.split, e.context_size, k,
                               e.n_context_draws, seed, e.max_episodes)
    result = score_draws(draws, e.metrics, e.threshold)
    out = run_dir_for(cfg, args.runs_root) / f"eval-{mode}-{cfg.hash(['eval', 'ictta'])}"
    write_csv(result.rows, out / "episodes.csv")
    write_aggregate(result, out / "aggregate.json", {"mode": mode, "k": k, "split": e.split})

    from .plotting import plot_candidates, plot_metric_summary

    plot_metric_summary(result.report.aggregates, out / "summary.png", title=f"{mode}, K={k}")
    d = draws[0]
    plot_candidates(d.episode.target, d.episode.raters, d.candidates, out / "candidates.png",
                    e.threshold)
    _print_table(_aggregate_rows("evaluate", mode, result.report.aggregates), TABLE_HEADER)
    print(f"report written to {out}")


def cmd_predict(args):
    configure_determinism()
    ckpt_path = Path(args.checkpoint)
    ckpt = Checkpoint.load(ckpt_path)
    model = ckpt.build_model()
    episode = load_episode(args.episode, size=model.config.input_size)
    if args.k < 1:
        raise ValueError(f"--k must be >= 1, got {args.k}")
    meta = {
        "config_hash": ckpt.train_state.get("config_hash"),
        "checkpoint_sha256": hashlib.sha256(ckpt_path.read_bytes()).hexdigest(),
        "mode": args.mode,
        "seed": args.seed,
        "episode": str(args.episode),
        "context_size": episode.context_size,
    }
    if args.mode == "tyche":
        sampler = TycheSampler(model, noise=args.noise, seed=args.seed)
        meta.update(noise=args.noise, noise_seed=derive_seed(args.seed, "noise"))
    else:
        base = TycheSampler(model, noise="zero", seed=args.seed).deterministic()
        sampler = ICTTASampler(base, args.family, not args.no_identity, args.seed, args.per_image)
        base_seed = derive_seed(args.seed, "ictta")
        meta.update(family=args.family, include_identity=not args.no_identity,
                    candidate_seeds=[[base_seed, k] for k in range(args.k)])
    candidates = sampler(episode, args.k)
    written = write_predictions(candidates, args.out, meta, args.threshold)
    for c in written["candidates"]:
        print(f"{c['mask']}\tmax_prob\t{c['max_prob']:.6f}")
    print(f"predictions written to {args.out}")


def cmd_study(args):
    cfg = load_config(args.config)
    configure_determinism()
    kind = args.kind or cfg.study.kind
    grid = args.grid or cfg.study.grid or None
    if grid is not None and kind in ("k_sweep", "context_sweep"):
        try:
            grid = [int(x) for x in grid]
        except ValueError:
            raise ValueError(f"{kind} grid values must be integers, got {grid}") from None
    model = _load_trained(cfg, args)
    dataset = _dataset(cfg, args.data)
    result = run_study(kind, model, dataset, cfg, grid, cfg.study.k_mode)
    out = run_dir_for(cfg, args.runs_root) / f"study-{kind}-{cfg.hash(['eval', 'ictta', 'study'])}"
    save_study(result, out)

    from .plotting import plot_study

    plot_study(result, _study_metrics(kind), out / "study.png")
    rows = []
    for x in result.grid:
        rows.extend(_aggregate_rows(kind, x, result.points[x].report.aggregates))
    _print_table(rows, TABLE_HEADER)
    print(f"study written to {out}")


def _study_metrics(kind):
    if kind == "ictta_family_ablation" or kind == "noise_ablation":
        return ["best_candidate_dice", "sample_diversity"]
    return ["best_candidate_dice", "dice"]


def cmd_report(args):
    """Re-render every figure in a run directory and print one table."""
    from .plotting import plot_loss_curve, plot_metric_summary, plot_study

    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    rows, figures = [], []
    train_json = run_dir / "train.json"
    if train_json.is_file():
        summary = json.loads(train_json.read_text())
        rows.append(("train", "parameters", "count", summary["parameters"], "", ""))
        rows.append(("train", "parameters", "reference", f"{REFERENCE_PARAMS:.0f}", "", ""))
        if summary["epoch_losses"]:
            rows.append(("train", "loss", "first_epoch", f"{summary['epoch_losses'][0]:.6f}", "", ""))
            rows.append(("train", "loss", "last_epoch", f"{summary['epoch_losses'][-1]:.6f}", "", ""))
        curve = run_dir / "loss_curve.csv"
        if curve.is_file():
            steps = np.loadtxt(curve, delimiter=",", skiprows=1, ndmin=2)
            if len(steps):
                figures.append(plot_loss_curve(steps[:, 1], run_dir / "loss_curve.png",
                                               summary["epoch_losses"]))
    for ev in sorted(run_dir.glob("eval-*")):
        agg = json.loads((ev / "aggregate.json").read_text())
        n_rows = len(read_csv(ev / "episodes.csv"))
        rows.extend(_aggregate_rows(ev.name, agg.get("mode", ""), agg["aggregates"]))
        rows.append((ev.name, "", "csv_rows", n_rows, "", ""))
        figures.append(plot_metric_summary(agg["aggregates"], ev / "summary.png", title=ev.name))
    for st in sorted(run_dir.glob("study-*")):
        study = load_study(st / "study.json")
        for x in study.grid:
            rows.extend(_aggregate_rows(st.name, x, study.points[x].report.aggregates))
        figures.append(plot_study(study, _study_metrics(study.kind), st / "study.png"))
    if not rows:
        raise FileNotFoundError(f"{run_dir} holds no train, evaluate or study output")
    _print_table(rows, TABLE_HEADER)
    for f in figures:
        print(f"figure\t{f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tychekit", description="Stochastic in-context segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, data=True, checkpoint=False):
        sp.add_argument("--config", help="TOML experiment config (defaults when omitted)")
        sp.add_argument("--runs-root", default="runs", help="parent of the run directories")
        if data:
            sp.add_argument("--data", help="load a generated dataset instead of regenerating it")
        if checkpoint:
            sp.add_argument("--checkpoint", help="checkpoint to use instead of the run's own")

    sp = sub.add_parser("generate-data", help="write the synthetic dataset to disk")
    with_config(sp, data=False)
    sp.add_argument("--out", help="output directory (default <runs-root>/data-<hash>)")
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("train", help="train a model and checkpoint every epoch")
    with_config(sp)
    sp.add_argument("--init", help="start from this checkpoint (fine-tuning)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a trained model on a split")
    with_config(sp, checkpoint=True)
    sp.add_argument("--mode", choices=["tyche", "ictta"], help="overrides eval.mode")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("predict", help="candidates for one on-disk episode")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episode", required=True, help="directory with target.png and context/")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["tyche", "ictta"], default="tyche")
    sp.add_argument("--k", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", choices=["random", "constant", "zero"], default="random")
    sp.add_argument("--family", default="ictta", help="ICTTA augmentation family")
    sp.add_argument("--no-identity", action="store_true", help="ICTTA: augment candidate 0 too")
    sp.add_argument("--per-image", action="store_true", help="ICTTA: independent draws per image")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("study", help="evaluate over a grid and plot the trend")
    with_config(sp, checkpoint=True)
    sp.add_argument("--kind", choices=["k_sweep", "context_sweep", "noise_ablation",
                                       "ictta_family_ablation"])
    sp.add_argument("--grid", nargs="+", help="grid values (default depends on kind)")
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("report", help="tabulate a run directory and redraw its figures")
    sp.add_argument("--run-dir", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TrainingDiverged as exc:
        print(f"tychekit {args.command}: training diverged: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, CheckpointError, EpisodeFormatError, ContractViolation,
            FileNotFoundError, ValueError) as exc:
        print(f"tychekit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
