"""Run configuration: one INI-style file with key = value sections.

Every command is a pure function of (config file, flags, checkpoints); the
parsed configuration also yields a canonical text form whose hash is embedded
in reports.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from dataclasses import replace as dataclasses_replace
from pathlib import Path

import numpy as np

from .bench import BiasSpec
from .diffusion import TrainConfig
from .errors import ConfigError
from .guidance import GuidanceConfig


@dataclass
class Paths:
    out_dir: Path
    denoiser_checkpoint: Path
    autoencoder_checkpoint: Path
    projector_checkpoint: Path
    pools: Path


@dataclass
class DiffusionSection:
    timesteps: int
    beta_min: float
    beta_max: float
    hidden_dim: int
    time_dim: int
    label_dim: int
    num_labels: int
    label: int
    sampler: str
    train: TrainConfig


@dataclass
class ProjectorSection:
    proj_dim: int | None
    temperature: float
    train: TrainConfig


@dataclass
class AutoencoderSection:
    mode: str
    latent_dim: int | None
    train: TrainConfig


@dataclass
class DataSection:
    spec: BiasSpec
    train_size: int
    pool_size: int
    positive_group: int
    negative_group: int


@dataclass
class RunSection:
    seed: int
    samples: int
    clusters: int


@dataclass
class RunConfig:
    paths: Paths
    data: DataSection
    diffusion: DiffusionSection
    autoencoder: AutoencoderSection
    projector: ProjectorSection
    guidance: GuidanceConfig
    run: RunSection
    sweep_windows: list[tuple[int, int]] = field(default_factory=list)

    def canonical_text(self) -> str:
        """Stable, fully resolved key = value dump used for hashing."""
        spec = self.data.spec
        items = {
            "data.means": ";".join(",".join(repr(float(v)) for v in row) for row in spec.means),
            "data.cov_scales": ",".join(repr(float(v)) for v in spec.cov_scales),
            "data.proportions": ",".join(repr(float(v)) for v in spec.proportions),
            "data.signal_probs": ",".join(repr(float(v)) for v in spec.signal_probs),
            "data.train_size": self.data.train_size,
            "data.pool_size": self.data.pool_size,
            "data.positive_group": self.data.positive_group,
            "data.negative_group": self.data.negative_group,
            "diffusion.timesteps": self.diffusion.timesteps,
            "diffusion.beta_min": repr(self.diffusion.beta_min),
            "diffusion.beta_max": repr(self.diffusion.beta_max),
            "diffusion.hidden_dim": self.diffusion.hidden_dim,
            "diffusion.time_dim": self.diffusion.time_dim,
            "diffusion.label_dim": self.diffusion.label_dim,
            "diffusion.num_labels": self.diffusion.num_labels,
            "diffusion.label": self.diffusion.label,
            "diffusion.sampler": self.diffusion.sampler,
            "diffusion.epochs": self.diffusion.train.epochs,
            "diffusion.batch_size": self.diffusion.train.batch_size,
            "diffusion.learning_rate": repr(self.diffusion.train.learning_rate),
            "autoencoder.mode": self.autoencoder.mode,
            "autoencoder.latent_dim": self.autoencoder.latent_dim,
            "autoencoder.epochs": self.autoencoder.train.epochs,
            "autoencoder.batch_size": self.autoencoder.train.batch_size,
            "autoencoder.learning_rate": repr(self.autoencoder.train.learning_rate),
            "projector.proj_dim": self.projector.proj_dim,
            "projector.temperature": repr(self.projector.temperature),
            "projector.epochs": self.projector.train.epochs,
            "projector.batch_size": self.projector.train.batch_size,
            "projector.learning_rate": repr(self.projector.train.learning_rate),
            "guidance.lambda_tc": repr(self.guidance.lambda_tc),
            "guidance.lambda_c": repr(self.guidance.lambda_c),
            "guidance.eta": repr(self.guidance.eta),
            "guidance.tau_prime": repr(self.guidance.tau_prime),
            "guidance.window_start": self.guidance.window_start,
            "guidance.window_end": self.guidance.window_end,
            "guidance.pools_per_step": self.guidance.pools_per_step,
            "guidance.double_application": self.guidance.double_application,
            "run.seed": self.run.seed,
            "run.samples": self.run.samples,
            "run.clusters": self.run.clusters,
            "sweep.windows": ";".join(f"{a}:{b}" for a, b in self.sweep_windows),
        }
        return "\n".join(f"{k} = {items[k]}" for k in sorted(items)) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]


class _Section:
    """Typed accessors over one INI section, raising ConfigError with the
    offending section.key name."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        if not parser.has_section(name):
            raise ConfigError(f"missing config section [{name}]")
        self.section = parser[name]

    def _get(self, key: str, cast, default=None, required: bool = False):
        if key not in self.section:
            if required:
                raise ConfigError(f"missing config key {self.name}.{key}")
            return default
        raw = self.section[key].strip()
        try:
            return cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {self.name}.{key}: {raw!r} ({exc})") from exc

    def get_int(self, key, default=None, required=False):
        return self._get(key, int, default, required)

    def get_float(self, key, default=None, required=False):
        return self._get(key, float, default, required)

    def get_str(self, key, default=None, required=False):
        return self._get(key, str, default, required)

    def get_bool(self, key, default=None, required=False):
        def cast(raw: str) -> bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")

        return self._get(key, cast, default, required)

    def get_floats(self, key, required=False):
        return self._get(key, lambda raw: [float(v) for v in raw.split(",")], None, required)

    def get_vectors(self, key, required=False):
        def cast(raw: str):
            return [[float(v) for v in part.split(",")] for part in raw.split(";")]

        return self._get(key, cast, None, required)

    def get_windows(self, key, default=None, required=False):
        def cast(raw: str):
            out = []
            for part in raw.split(","):
                a, b = part.strip().split(":")
                out.append((int(a), int(b)))
            return out

        return self._get(key, cast, default, required)


def _train_config(sec: _Section, seed: int, epochs: int, batch_size: int, lr: float) -> TrainConfig:
    return TrainConfig(
        epochs=sec.get_int("epochs", epochs),
        batch_size=sec.get_int("batch_size", batch_size),
        learning_rate=sec.get_float("learning_rate", lr),
        seed=seed,
    )


def derived_seed(base: int, purpose: int) -> int:
    """Deterministic per-purpose seed from the global seed."""
    return int(np.random.SeedSequence((int(base), int(purpose))).generate_state(1)[0])


# Purpose codes for derived seeds.
SEED_DATASET = 0
SEED_POOLS = 1
SEED_AUTOENCODER = 2
SEED_DIFFUSION = 3
SEED_PROJECTOR = 4
SEED_SAMPLING = 5


def load_config(
    path: str | Path,
    seed_override: int | None = None,
    out_override: str | None = None,
    guidance_overrides: dict | None = None,
) -> RunConfig:
    """Parse a config file. Flag overrides are applied here so that derived
    seeds and defaulted paths follow the overridden values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    run_sec = _Section(parser, "run")
    seed = run_sec.get_int("seed", required=True) if seed_override is None else int(seed_override)
    run = RunSection(
        seed=seed,
        samples=run_sec.get_int("samples", 500),
        clusters=run_sec.get_int("clusters", 0),
    )

    data_sec = _Section(parser, "data")
    means = data_sec.get_vectors("means", required=True)
    try:
        spec = BiasSpec(
            means=np.array(means),
            cov_scales=np.array(data_sec.get_floats("cov_scales", required=True)),
            proportions=np.array(data_sec.get_floats("proportions", required=True)),
            signal_probs=np.array(data_sec.get_floats("signal_probs", required=True)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [data] mixture spec: {exc}") from exc
    data = DataSection(
        spec=spec,
        train_size=data_sec.get_int("train_size", 2000),
        pool_size=data_sec.get_int("pool_size", 256),
        positive_group=data_sec.get_int("positive_group", required=True),
        negative_group=data_sec.get_int("negative_group", required=True),
    )
    for name, g in (("positive_group", data.positive_group), ("negative_group", data.negative_group)):
        if not 0 <= g < spec.n_groups:
            raise ConfigError(f"data.{name} = {g} is not a group index in [0, {spec.n_groups})")

    diff_sec = _Section(parser, "diffusion")
    diffusion = DiffusionSection(
        timesteps=diff_sec.get_int("timesteps", 30),
        beta_min=diff_sec.get_float("beta_min", 1e-4),
        beta_max=diff_sec.get_float("beta_max", 0.2),
        hidden_dim=diff_sec.get_int("hidden_dim", 64),
        time_dim=diff_sec.get_int("time_dim", 8),
        label_dim=diff_sec.get_int("label_dim", 4),
        num_labels=diff_sec.get_int("num_labels", 1),
        label=diff_sec.get_int("label", 0),
        sampler=diff_sec.get_str("sampler", "ancestral"),
        train=_train_config(diff_sec, derived_seed(seed, SEED_DIFFUSION), 300, 64, 1e-3),
    )
    if not 0 <= diffusion.label < diffusion.num_labels:
        raise ConfigError(f"diffusion.label = {diffusion.label} outside [0, {diffusion.num_labels})")

    if parser.has_section("autoencoder"):
        ae_sec = _Section(parser, "autoencoder")
        autoencoder = AutoencoderSection(
            mode=ae_sec.get_str("mode", "identity"),
            latent_dim=ae_sec.get_int("latent_dim", None),
            train=_train_config(ae_sec, derived_seed(seed, SEED_AUTOENCODER), 2000, 64, 1e-2),
        )
    else:
        autoencoder = AutoencoderSection(
            mode="identity",
            latent_dim=None,
            train=TrainConfig(epochs=2000, batch_size=64, learning_rate=1e-2, seed=derived_seed(seed, SEED_AUTOENCODER)),
        )
    if autoencoder.mode not in ("identity", "linear"):
        raise ConfigError(f"autoencoder.mode must be identity or linear, got {autoencoder.mode!r}")
    if autoencoder.mode == "linear" and autoencoder.latent_dim is None:
        raise ConfigError("autoencoder.latent_dim is required in linear mode")

    proj_sec = _Section(parser, "projector")
    projector = ProjectorSection(
        proj_dim=proj_sec.get_int("proj_dim", None),
        temperature=proj_sec.get_float("temperature", 0.1),
        train=_train_config(proj_sec, derived_seed(seed, SEED_PROJECTOR), 4, 4, 1e-2),
    )

    guid_sec = _Section(parser, "guidance")
    guidance = GuidanceConfig(
        lambda_tc=guid_sec.get_float("lambda_tc", 9.0),
        lambda_c=guid_sec.get_float("lambda_c", 150.0),
        eta=guid_sec.get_float("eta", 2.0),
        tau_prime=guid_sec.get_float("tau_prime", 0.1),
        window_start=guid_sec.get_int("window_start", 26),
        window_end=guid_sec.get_int("window_end", 30),
        pools_per_step=guid_sec.get_int("pools_per_step", 1),
        double_application=guid_sec.get_bool("double_application", True),
    )
    for key, value in (guidance_overrides or {}).items():
        if value is not None:
            guidance = dataclasses_replace(guidance, **{key: value})
    try:
        guidance.validate(diffusion.timesteps)
    except ValueError as exc:
        raise ConfigError(f"bad [guidance] section: {exc}") from exc

    paths_sec = _Section(parser, "paths")
    out_dir = Path(out_override) if out_override is not None else Path(paths_sec.get_str("out_dir", required=True))
    paths = Paths(
        out_dir=out_dir,
        denoiser_checkpoint=Path(paths_sec.get_str("denoiser_checkpoint", str(out_dir / "denoiser.ckpt"))),
        autoencoder_checkpoint=Path(
            paths_sec.get_str("autoencoder_checkpoint", str(out_dir / "autoencoder.ckpt"))
        ),
        projector_checkpoint=Path(paths_sec.get_str("projector_checkpoint", str(out_dir / "projector.ckpt"))),
        pools=Path(paths_sec.get_str("pools", str(out_dir / "pools.csv"))),
    )

    windows: list[tuple[int, int]] = []
    if parser.has_section("sweep"):
        windows = _Section(parser, "sweep").get_windows("windows", []) or []
        for a, b in windows:
            if a <= b and (a < 1 or b > diffusion.timesteps):
                raise ConfigError(f"sweep window {a}:{b} outside sampling steps [1, {diffusion.timesteps}]")

    if run.clusters == 0:
        run = RunSection(seed=run.seed, samples=run.samples, clusters=spec.n_groups)

    return RunConfig(
        paths=paths,
        data=data,
        diffusion=diffusion,
        autoencoder=autoencoder,
        projector=projector,
        guidance=guidance,
        run=run,
        sweep_windows=windows,
    )
