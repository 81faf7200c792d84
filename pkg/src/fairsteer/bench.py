"""Synthetic biased-data generation, bias/diversity metrics, and the paired
guided-vs-unguided experiment harnesses.

All metrics live in data space. Generated latents are decoded through the
autoencoder before any metric sees them; with the default identity
autoencoder the two spaces coincide.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .autoencoder import AutoEncoder, decode
from .diffusion import Denoiser, sample
from .guidance import GuidanceConfig, GuidanceContext, guided_sample

Array = np.ndarray


@dataclass
class BiasSpec:
    """Isotropic Gaussian mixture with skewed group proportions and a binary
    attribute signal attached to each group."""

    means: Array  # (G, D) component means
    cov_scales: Array  # (G,) isotropic standard deviations
    proportions: Array  # (G,) sampling proportions, sum to 1
    signal_probs: Array  # (G,) probability that a group member carries signal +1

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.cov_scales = np.asarray(self.cov_scales, dtype=float)
        self.proportions = np.asarray(self.proportions, dtype=float)
        self.signal_probs = np.asarray(self.signal_probs, dtype=float)
        g = self.means.shape[0]
        if self.cov_scales.shape != (g,) or self.proportions.shape != (g,) or self.signal_probs.shape != (g,):
            raise ValueError("per-group fields must all have one entry per group")
        if np.any(self.cov_scales <= 0.0):
            raise ValueError("covariance scales must be > 0")
        if np.any(self.proportions < 0.0) or abs(float(self.proportions.sum()) - 1.0) > 1e-9:
            raise ValueError("proportions must be non-negative and sum to 1")
        if np.any((self.signal_probs < 0.0) | (self.signal_probs > 1.0)):
            raise ValueError("signal probabilities must lie in [0, 1]")

    @property
    def n_groups(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def group_signals(self) -> Array:
        """The majority attribute signal of each group."""
        return np.where(self.signal_probs >= 0.5, 1, -1)


@dataclass
class BiasedDataset:
    points: Array  # (n, D)
    groups: Array  # (n,) int
    signals: Array  # (n,) values in {+1, -1}


def make_biased_dataset(spec: BiasSpec, n: int, seed) -> BiasedDataset:
    """Draw n labeled points from the mixture; deterministic given the seed."""
    if n < 1:
        raise ValueError(f"need n >= 1 draws, got {n}")
    rng = np.random.default_rng(seed)
    groups = rng.choice(spec.n_groups, size=n, p=spec.proportions)
    noise = rng.standard_normal((n, spec.dim))
    points = spec.means[groups] + spec.cov_scales[groups][:, None] * noise
    signals = np.where(rng.random(n) < spec.signal_probs[groups], 1, -1)
    return BiasedDataset(points=points, groups=groups, signals=signals)


def group_distance(signals) -> float:
    """sum(g_i) / sum(|g_i|) over attribute signals in {+1, -1}; 0 is balanced."""
    signals = np.asarray(signals)
    if signals.size == 0:
        raise ValueError("need at least one signal")
    if not np.all(np.abs(signals) == 1):
        raise ValueError("signals must be +1 or -1")
    return float(signals.sum() / np.abs(signals).sum())


@dataclass
class BayesOracle:
    """Bayes-optimal classifier of the generating mixture."""

    means: Array
    cov_scales: Array
    log_priors: Array

    @classmethod
    def from_spec(cls, spec: BiasSpec) -> "BayesOracle":
        with np.errstate(divide="ignore"):
            log_priors = np.log(spec.proportions)
        return cls(means=spec.means, cov_scales=spec.cov_scales, log_priors=log_priors)

    def classify(self, points: Array) -> Array:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.means.shape[1]:
            raise ValueError(f"point dimension {points.shape[1]} != {self.means.shape[1]}")
        d2 = ((points[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        dim = self.means.shape[1]
        log_post = self.log_priors[None, :] - d2 / (2.0 * self.cov_scales**2) - dim * np.log(self.cov_scales)
        return np.argmax(log_post, axis=1)


def nearest_group(points: Array, means: Array) -> Array:
    """Plain nearest-centroid assignment, ignoring priors and scales."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d2 = ((points[:, None, :] - np.atleast_2d(means)[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def group_accuracy(points: Array, claimed_groups: Array, oracle: BayesOracle) -> dict[int, float]:
    """Per claimed group, the fraction of its points the oracle classifies as
    that group. Groups with no points are absent from the result."""
    if oracle is None:
        raise ValueError("an oracle classifier is required")
    claimed = np.asarray(claimed_groups, dtype=int)
    predicted = oracle.classify(points)
    out: dict[int, float] = {}
    for g in np.unique(claimed):
        mask = claimed == g
        out[int(g)] = float(np.mean(predicted[mask] == g))
    return out


def _kmeanspp_centers(points: Array, k: int, rng: np.random.Generator) -> Array:
    """k-means++ style seeding: centers are actual samples, chosen with
    probability proportional to squared distance from the chosen set."""
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            ((points[:, None, :] - np.stack(centers)[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = float(d2.sum())
        if total == 0.0:
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.stack(centers)


def intra_cluster_diversity(
    samples: Array, k: int, seed, pairs_per_cluster: int = 200
) -> tuple[float, list[float]]:
    """Mean pairwise Euclidean distance inside each of k clusters, averaged
    over clusters.

    Clusters are seeded k-means++ style from the samples themselves. Small
    clusters are measured over all pairs exactly; larger ones over
    pairs_per_cluster random pairs. Returns (overall mean, per-cluster means);
    clusters with fewer than two members contribute 0.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    if k < 1:
        raise ValueError(f"need k >= 1 clusters, got {k}")
    if n < 2 * k:
        raise ValueError(f"need at least 2k={2 * k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(samples, k, rng)
    assign = nearest_group(samples, centers)
    per_cluster: list[float] = []
    for c in range(k):
        members = samples[assign == c]
        m = members.shape[0]
        if m < 2:
            per_cluster.append(0.0)
            continue
        n_pairs = m * (m - 1) // 2
        if n_pairs <= pairs_per_cluster:
            i, j = np.triu_indices(m, k=1)
        else:
            i = rng.integers(m, size=pairs_per_cluster)
            j = rng.integers(m - 1, size=pairs_per_cluster)
            j = np.where(j >= i, j + 1, j)  # distinct partner
        dists = np.linalg.norm(members[i] - members[j], axis=1)
        per_cluster.append(float(dists.mean()))
    return float(np.mean(per_cluster)), per_cluster


@dataclass
class MetricsReport:
    """Bias, diversity, adherence, and timing results for one sampling run."""

    run: str
    n_samples: int
    group_distance: float
    intra_diversity_mean: float
    intra_diversity: list[float]
    group_accuracy: dict[int, float]
    seconds_per_sample: float
    config_hash: str
    seed: int

    def __post_init__(self):
        if not -1.0 <= self.group_distance <= 1.0:
            raise ValueError(f"group distance {self.group_distance} outside [-1, 1]")
        for g, acc in self.group_accuracy.items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} for group {g} outside [0, 1]")


@dataclass
class ExperimentResult:
    unguided: MetricsReport
    guided: MetricsReport
    unguided_samples: Array  # decoded, data space
    guided_samples: Array


def chain_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Per-chain seed shared by the paired guided and unguided trajectories."""
    return np.random.SeedSequence((int(base_seed), int(index)))


def _paired_samples(
    d: Denoiser,
    ctx: GuidanceContext,
    cfg: GuidanceConfig,
    label: int,
    n: int,
    base_seed: int,
) -> tuple[Array, Array, float, float]:
    """Sample n paired chains; returns latent arrays (unguided, guided) plus
    per-sample wall times for each path."""
    unguided = np.empty((n, d.latent_dim))
    guided = np.empty((n, d.latent_dim))
    t0 = time.perf_counter()
    for i in range(n):
        unguided[i] = sample(d, label, ctx.schedule, chain_seed(base_seed, i))
    t1 = time.perf_counter()
    for i in range(n):
        guided[i] = guided_sample(d, ctx, cfg, label, chain_seed(base_seed, i))
    t2 = time.perf_counter()
    return unguided, guided, (t1 - t0) / n, (t2 - t1) / n


def _report_for(
    run: str,
    points: Array,
    spec: BiasSpec,
    oracle: BayesOracle,
    clusters: int,
    metric_seed: int,
    seconds_per_sample: float,
    config_hash: str,
    seed: int,
) -> MetricsReport:
    assigned = oracle.classify(points)
    signals = spec.group_signals()[assigned]
    claims = nearest_group(points, spec.means)
    div_mean, div_per = intra_cluster_diversity(points, clusters, metric_seed)
    return MetricsReport(
        run=run,
        n_samples=points.shape[0],
        group_distance=group_distance(signals),
        intra_diversity_mean=div_mean,
        intra_diversity=div_per,
        group_accuracy=group_accuracy(points, claims, oracle),
        seconds_per_sample=seconds_per_sample,
        config_hash=config_hash,
        seed=seed,
    )


def run_experiment(
    d: Denoiser,
    ctx: GuidanceContext,
    cfg: GuidanceConfig,
    spec: BiasSpec,
    label: int = 0,
    n: int = 500,
    seed: int = 0,
    clusters: int | None = None,
    config_hash: str = "",
) -> ExperimentResult:
    """Paired guided/unguided sampling runs sharing per-chain seeds, scored
    with the bias, diversity, and adherence metrics."""
    if clusters is None:
        clusters = spec.n_groups
    oracle = BayesOracle.from_spec(spec)
    z_un, z_gd, sec_un, sec_gd = _paired_samples(d, ctx, cfg, label, n, seed)
    x_un = decode(ctx.autoencoder, z_un)
    x_gd = decode(ctx.autoencoder, z_gd)
    metric_seed = seed + 1  # shared by both runs so diversity pairing matches
    return ExperimentResult(
        unguided=_report_for("unguided", x_un, spec, oracle, clusters, metric_seed, sec_un, config_hash, seed),
        guided=_report_for("guided", x_gd, spec, oracle, clusters, metric_seed, sec_gd, config_hash, seed),
        unguided_samples=x_un,
        guided_samples=x_gd,
    )


@dataclass
class AblationRow:
    name: str
    lambda_tc: float
    lambda_c: float
    gd_unguided: float
    gd_guided: float
    correction: float  # |gd_unguided| - |gd_guided|
    min_accuracy: float


def run_ablation(
    d: Denoiser,
    ctx: GuidanceContext,
    cfg: GuidanceConfig,
    spec: BiasSpec,
    variants: list[tuple[str, float, float]] | None = None,
    label: int = 0,
    n: int = 200,
    seed: int = 0,
    jobs: int = 1,
    config_hash: str = "",
) -> list[AblationRow]:
    """One paired experiment per loss-term variant; shared seeds across cells."""
    if variants is None:
        variants = [
            ("full", cfg.lambda_tc, cfg.lambda_c),
            ("no_tc", 0.0, cfg.lambda_c),
            ("no_c", cfg.lambda_tc, 0.0),
        ]
    if len(variants) == 0:
        raise ValueError("ablation grid is empty")

    def cell(variant: tuple[str, float, float]) -> AblationRow:
        name, ltc, lc = variant
        vcfg = replace(cfg, lambda_tc=ltc, lambda_c=lc)
        res = run_experiment(d, ctx, vcfg, spec, label=label, n=n, seed=seed, config_hash=config_hash)
        accs = list(res.guided.group_accuracy.values())
        return AblationRow(
            name=name,
            lambda_tc=ltc,
            lambda_c=lc,
            gd_unguided=res.unguided.group_distance,
            gd_guided=res.guided.group_distance,
            correction=abs(res.unguided.group_distance) - abs(res.guided.group_distance),
            min_accuracy=min(accs) if accs else float("nan"),
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(cell, variants))
    return [cell(v) for v in variants]


@dataclass
class WindowRow:
    window_start: int
    window_end: int
    displacement: float
    group_distance: float


@dataclass
class SweepResult:
    rows: list[WindowRow]
    monotone_fraction: float  # fraction of consecutive (by start) non-decreasing displacements


def window_sweep(
    d: Denoiser,
    ctx: GuidanceContext,
    cfg: GuidanceConfig,
    spec: BiasSpec,
    windows: list[tuple[int, int]],
    label: int = 0,
    n: int = 200,
    seed: int = 0,
    jobs: int = 1,
) -> SweepResult:
    """Mean paired-seed displacement of the final sample per window position."""
    if len(windows) == 0:
        raise ValueError("no window positions given")
    for start, end in windows:
        wcfg = replace(cfg, window_start=int(start), window_end=int(end))
        wcfg.validate(ctx.schedule.T)
    oracle = BayesOracle.from_spec(spec)

    def cell(window: tuple[int, int]) -> WindowRow:
        wcfg = replace(cfg, window_start=int(window[0]), window_end=int(window[1]))
        z_un, z_gd, _, _ = _paired_samples(d, ctx, wcfg, label, n, seed)
        x_gd = decode(ctx.autoencoder, z_gd)
        displacement = float(np.mean(np.linalg.norm(z_gd - z_un, axis=1)))
        signals = spec.group_signals()[oracle.classify(x_gd)]
        return WindowRow(
            window_start=int(window[0]),
            window_end=int(window[1]),
            displacement=displacement,
            group_distance=group_distance(signals),
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(cell, windows))
    else:
        rows = [cell(w) for w in windows]

    ordered = sorted(rows, key=lambda r: (r.window_start, r.window_end))
    if len(ordered) > 1:
        ok = sum(1 for a, b in zip(ordered, ordered[1:]) if b.displacement >= a.displacement)
        monotone = ok / (len(ordered) - 1)
    else:
        monotone = 1.0
    return SweepResult(rows=rows, monotone_fraction=monotone)
