"""Command-line entry point tying the pipeline together.

Commands: train-diffusion, train-prior, sample, correct, evaluate, ablate,
window-sweep. Every command is a pure function of (config file, flags,
checkpoints); all randomness derives from the configured seed, so reruns
reproduce identical CSV/checkpoint bytes. Exit codes: 0 success, 2
config/input error, 3 runtime numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autoencoder import AutoEncoder, decode, encode, load_autoencoder, save_autoencoder, train_autoencoder
from .bench import (
    BayesOracle,
    chain_seed,
    make_biased_dataset,
    run_ablation,
    run_experiment,
    window_sweep,
)
from .config import (
    SEED_DATASET,
    SEED_DIFFUSION,
    SEED_POOLS,
    SEED_SAMPLING,
    RunConfig,
    derived_seed,
    load_config,
)
from .diffusion import load_denoiser, make_schedule, sample, save_denoiser, train_denoiser
from .errors import ConfigError, NumericalError
from .guidance import GuidanceContext, guided_sample
from .prior import SamplePools, load_pools, load_projector, save_pools, save_projector, train_projector
from .reports import atomic_write_text, fmt_float, svg_scatter, write_csv


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the INI config file")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("--out", default=None, help="override [paths] out_dir")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for benchmark cells")
    p.add_argument("--lambda-tc", type=float, default=None, dest="lambda_tc")
    p.add_argument("--lambda-c", type=float, default=None, dest="lambda_c")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--tau-prime", type=float, default=None, dest="tau_prime")
    p.add_argument("--window-start", type=int, default=None, dest="window_start")
    p.add_argument("--window-end", type=int, default=None, dest="window_end")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairsteer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("train-diffusion", cmd_train_diffusion, "train the denoiser on the configured biased mixture"),
        ("train-prior", cmd_train_prior, "train the contrastive latent prior on the pool file"),
        ("sample", cmd_sample, "draw unguided samples"),
        ("correct", cmd_correct, "draw guided (corrected) samples"),
        ("evaluate", cmd_evaluate, "paired guided/unguided metrics report"),
        ("ablate", cmd_ablate, "loss-term ablation table"),
        ("window-sweep", cmd_window_sweep, "displacement per correction-window position"),
    ]
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("sample", "correct"):
            p.add_argument("--n", type=int, default=None, help="number of samples (default [run] samples)")
            p.add_argument("--label", type=int, default=None, help="condition label (default [diffusion] label)")
        p.set_defaults(func=func)
    return parser


def _load_cfg(args) -> RunConfig:
    overrides = {
        "lambda_tc": args.lambda_tc,
        "lambda_c": args.lambda_c,
        "eta": args.eta,
        "tau_prime": args.tau_prime,
        "window_start": args.window_start,
        "window_end": args.window_end,
    }
    return load_config(args.config, seed_override=args.seed, out_override=args.out, guidance_overrides=overrides)


def _build_autoencoder(cfg: RunConfig, points: np.ndarray) -> AutoEncoder:
    if cfg.autoencoder.mode == "identity":
        return AutoEncoder.identity(cfg.data.spec.dim)
    ae, _ = train_autoencoder(points, cfg.autoencoder.train, cfg.autoencoder.latent_dim)
    return ae


def _pool_points(cfg: RunConfig, group: int, rng: np.random.Generator) -> np.ndarray:
    spec = cfg.data.spec
    return spec.means[group] + spec.cov_scales[group] * rng.standard_normal((cfg.data.pool_size, spec.dim))


def cmd_train_diffusion(cfg: RunConfig, args) -> int:
    spec = cfg.data.spec
    dataset = make_biased_dataset(spec, cfg.data.train_size, derived_seed(cfg.run.seed, SEED_DATASET))
    ae = _build_autoencoder(cfg, dataset.points)
    save_autoencoder(cfg.paths.autoencoder_checkpoint, ae)

    latents = encode(ae, dataset.points)
    labels = np.full(latents.shape[0], cfg.diffusion.label, dtype=int)
    schedule = make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_min, cfg.diffusion.beta_max)
    denoiser, losses = train_denoiser(
        latents,
        labels,
        schedule,
        cfg.diffusion.train,
        hidden_dim=cfg.diffusion.hidden_dim,
        time_dim=cfg.diffusion.time_dim,
        label_dim=cfg.diffusion.label_dim,
        num_labels=cfg.diffusion.num_labels,
    )
    save_denoiser(cfg.paths.denoiser_checkpoint, denoiser, schedule)

    header = ["group", "signal"] + [f"x{i}" for i in range(spec.dim)]
    rows = [[int(g), int(s)] + [float(v) for v in p] for g, s, p in zip(dataset.groups, dataset.signals, dataset.points)]
    write_csv(cfg.paths.out_dir / "dataset.csv", header, rows)

    pool_rng = np.random.default_rng(derived_seed(cfg.run.seed, SEED_POOLS))
    pos_pts = _pool_points(cfg, cfg.data.positive_group, pool_rng)
    neg_pts = _pool_points(cfg, cfg.data.negative_group, pool_rng)
    save_pools(cfg.paths.pools, SamplePools.from_data(ae, pos_pts, neg_pts))

    final = losses[-1] if losses else float("nan")
    print(f"trained denoiser: {len(losses)} epochs, final epoch-mean loss = {fmt_float(final)}")
    print(f"wrote {cfg.paths.denoiser_checkpoint}")
    print(f"wrote {cfg.paths.autoencoder_checkpoint}")
    print(f"wrote {cfg.paths.pools}")
    return 0


def cmd_train_prior(cfg: RunConfig, args) -> int:
    pools = load_pools(cfg.paths.pools)
    projector, losses = train_projector(
        pools, cfg.projector.train, tau=cfg.projector.temperature, proj_dim=cfg.projector.proj_dim
    )
    save_projector(cfg.paths.projector_checkpoint, projector)
    final = losses[-1] if losses else float("nan")
    print(f"trained projector: {len(losses)} epochs, final epoch-mean loss = {fmt_float(final)}")
    print(f"wrote {cfg.paths.projector_checkpoint}")
    return 0


def _load_components(cfg: RunConfig):
    denoiser, schedule = load_denoiser(cfg.paths.denoiser_checkpoint)
    ae = load_autoencoder(cfg.paths.autoencoder_checkpoint)
    projector = load_projector(cfg.paths.projector_checkpoint) if cfg.paths.projector_checkpoint.exists() else None
    if projector is None and cfg.guidance.lambda_tc > 0.0:
        raise FileNotFoundError(f"missing checkpoint: {cfg.paths.projector_checkpoint}")
    pools = load_pools(cfg.paths.pools)
    ctx = GuidanceContext(
        projector=projector, pools=pools, autoencoder=ae, schedule=schedule, rng=np.random.default_rng(0)
    )
    return denoiser, ctx


def _sample_rows(cfg: RunConfig, points: np.ndarray) -> tuple[list[str], list[list]]:
    spec = cfg.data.spec
    oracle = BayesOracle.from_spec(spec)
    assigned = oracle.classify(points) if points.shape[0] else np.empty(0, dtype=int)
    signals = spec.group_signals()[assigned] if points.shape[0] else np.empty(0, dtype=int)
    header = ["chain", "group", "signal"] + [f"x{i}" for i in range(points.shape[1] if points.size else spec.dim)]
    rows = [
        [i, int(g), int(s)] + [float(v) for v in p]
        for i, (g, s, p) in enumerate(zip(assigned, signals, points))
    ]
    return header, rows


def _write_samples(cfg: RunConfig, name: str, points: np.ndarray) -> Path:
    header, rows = _sample_rows(cfg, points)
    out = cfg.paths.out_dir / f"{name}.csv"
    write_csv(out, header, rows)
    if points.size and points.shape[1] == 2:
        oracle = BayesOracle.from_spec(cfg.data.spec)
        svg_scatter(
            cfg.paths.out_dir / f"{name}.svg",
            points,
            oracle.classify(points),
            means=cfg.data.spec.means,
            title=name,
        )
    return out


def cmd_sample(cfg: RunConfig, args) -> int:
    denoiser, ctx = _load_components(cfg)
    n = cfg.run.samples if args.n is None else args.n
    label = cfg.diffusion.label if args.label is None else args.label
    base = derived_seed(cfg.run.seed, SEED_SAMPLING)
    latents = np.empty((n, denoiser.latent_dim))
    for i in range(n):
        latents[i] = sample(denoiser, label, ctx.schedule, chain_seed(base, i), method=cfg.diffusion.sampler)
    points = decode(ctx.autoencoder, latents) if n else latents
    out = _write_samples(cfg, "samples", points)
    print(f"wrote {out} ({n} samples)")
    return 0


def cmd_correct(cfg: RunConfig, args) -> int:
    denoiser, ctx = _load_components(cfg)
    n = cfg.run.samples if args.n is None else args.n
    label = cfg.diffusion.label if args.label is None else args.label
    base = derived_seed(cfg.run.seed, SEED_SAMPLING)
    latents = np.empty((n, denoiser.latent_dim))
    loss_rows: list[list] = []
    for i in range(n):
        log: list[tuple[int, float]] = []
        latents[i] = guided_sample(denoiser, ctx, cfg.guidance, label, chain_seed(base, i), loss_log=log)
        loss_rows.extend([i, step, loss] for step, loss in log)
    points = decode(ctx.autoencoder, latents) if n else latents
    out = _write_samples(cfg, "corrected", points)
    losses_path = cfg.paths.out_dir / "window_losses.csv"
    write_csv(losses_path, ["chain", "step", "loss"], loss_rows)
    print(f"wrote {out} ({n} samples)")
    print(f"wrote {losses_path} ({len(loss_rows)} windowed steps)")
    return 0


def _metrics_rows(cfg: RunConfig, reports) -> tuple[list[str], list[list]]:
    k = cfg.run.clusters
    groups = range(cfg.data.spec.n_groups)
    header = (
        ["run", "n_samples", "group_distance", "intra_diversity_mean"]
        + [f"intra_diversity_{c}" for c in range(k)]
        + [f"accuracy_{g}" for g in groups]
        + ["config_hash", "seed"]
    )
    rows = []
    for rep in reports:
        row = [rep.run, rep.n_samples, rep.group_distance, rep.intra_diversity_mean]
        row += [rep.intra_diversity[c] for c in range(k)]
        row += [rep.group_accuracy.get(g, "") for g in groups]
        row += [rep.config_hash, rep.seed]
        rows.append(row)
    return header, rows


def cmd_evaluate(cfg: RunConfig, args) -> int:
    denoiser, ctx = _load_components(cfg)
    base = derived_seed(cfg.run.seed, SEED_SAMPLING)
    result = run_experiment(
        denoiser,
        ctx,
        cfg.guidance,
        cfg.data.spec,
        label=cfg.diffusion.label,
        n=cfg.run.samples,
        seed=base,
        clusters=cfg.run.clusters,
        config_hash=cfg.config_hash(),
    )
    header, rows = _metrics_rows(cfg, [result.unguided, result.guided])
    metrics_path = cfg.paths.out_dir / "metrics.csv"
    write_csv(metrics_path, header, rows)
    timing = {
        "unguided_seconds_per_sample": result.unguided.seconds_per_sample,
        "guided_seconds_per_sample": result.guided.seconds_per_sample,
    }
    atomic_write_text(cfg.paths.out_dir / "timing.json", json.dumps(timing, indent=2) + "\n")
    if cfg.data.spec.dim == 2:
        oracle = BayesOracle.from_spec(cfg.data.spec)
        for name, pts in (("scatter_unguided", result.unguided_samples), ("scatter_guided", result.guided_samples)):
            svg_scatter(cfg.paths.out_dir / f"{name}.svg", pts, oracle.classify(pts), means=cfg.data.spec.means, title=name)
    print(f"wrote {metrics_path}")
    print(
        f"group_distance: unguided = {fmt_float(result.unguided.group_distance)}, "
        f"guided = {fmt_float(result.guided.group_distance)}"
    )
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    denoiser, ctx = _load_components(cfg)
    base = derived_seed(cfg.run.seed, SEED_SAMPLING)
    rows = run_ablation(
        denoiser,
        ctx,
        cfg.guidance,
        cfg.data.spec,
        label=cfg.diffusion.label,
        n=cfg.run.samples,
        seed=base,
        jobs=args.jobs,
        config_hash=cfg.config_hash(),
    )
    header = ["name", "lambda_tc", "lambda_c", "gd_unguided", "gd_guided", "correction", "min_accuracy"]
    table = [
        [r.name, r.lambda_tc, r.lambda_c, r.gd_unguided, r.gd_guided, r.correction, r.min_accuracy]
        for r in rows
    ]
    out = cfg.paths.out_dir / "ablation.csv"
    write_csv(out, header, table)
    print(f"wrote {out} ({len(rows)} variants)")
    return 0


def cmd_window_sweep(cfg: RunConfig, args) -> int:
    if not cfg.sweep_windows:
        raise ConfigError("missing config key sweep.windows")
    denoiser, ctx = _load_components(cfg)
    base = derived_seed(cfg.run.seed, SEED_SAMPLING)
    result = window_sweep(
        denoiser,
        ctx,
        cfg.guidance,
        cfg.data.spec,
        windows=cfg.sweep_windows,
        label=cfg.diffusion.label,
        n=cfg.run.samples,
        seed=base,
        jobs=args.jobs,
    )
    header = ["window", "displacement", "group_distance"]
    table = [[f"{r.window_start}:{r.window_end}", r.displacement, r.group_distance] for r in result.rows]
    out = cfg.paths.out_dir / "window_sweep.csv"
    write_csv(out, header, table)
    print(f"wrote {out} ({len(result.rows)} windows)")
    print(f"displacement monotone fraction (by window start): {fmt_float(result.monotone_fraction)}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
