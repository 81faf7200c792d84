"""Toy conditional DDPM in plain numpy.

Noise schedule, a small noise-prediction MLP with manual backprop, training,
closed-form forward noising, and ancestral reverse sampling. Timesteps are
1-based: t=1 is the least noisy level, t=T the noisiest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

Array = np.ndarray


@dataclass
class NoiseSchedule:
    """Per-timestep variance coefficients for the forward/reverse process."""

    T: int
    betas: Array
    alphas: Array
    alpha_bars: Array

    def check_timestep(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal coefficient at timestep t, with alpha_bar(0) == 1."""
        if t == 0:
            return 1.0
        self.check_timestep(t)
        return float(self.alpha_bars[t - 1])


def make_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta schedule with T steps, beta interpolated from beta_min to beta_max."""
    if T < 2:
        raise ValueError(f"need at least 2 timesteps, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"betas must satisfy 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def forward_sample(z0: Array, t: int, schedule: NoiseSchedule, noise: Array) -> Array:
    """Noise a clean latent to level t: sqrt(abar_t)*z0 + sqrt(1-abar_t)*noise."""
    schedule.check_timestep(t)
    z0 = np.asarray(z0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if z0.shape != noise.shape:
        raise ValueError(f"latent shape {z0.shape} != noise shape {noise.shape}")
    ab = schedule.alpha_bar(t)
    out = math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * noise
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"forward sample at t={t} produced non-finite values")
    return out


def timestep_features(ts: Array, dim: int) -> Array:
    """Sinusoidal features of integer timesteps, shape (len(ts), dim). dim must be even."""
    if dim % 2 != 0:
        raise ValueError(f"timestep feature dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = np.asarray(ts, dtype=float)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class TrainConfig:
    """Shared knobs for the gradient-descent training loops."""

    epochs: int
    batch_size: int
    learning_rate: float
    seed: int

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


class Denoiser:
    """Noise-prediction MLP: three hidden ReLU layers over the latent
    concatenated with sinusoidal timestep features and a learned label embedding.
    """

    def __init__(
        self,
        latent_dim: int,
        num_labels: int,
        hidden_dim: int = 64,
        time_dim: int = 8,
        label_dim: int = 4,
        rng: np.random.Generator | None = None,
    ):
        if latent_dim < 1 or num_labels < 1:
            raise ValueError("latent_dim and num_labels must be >= 1")
        self.latent_dim = latent_dim
        self.num_labels = num_labels
        self.hidden_dim = hidden_dim
        self.time_dim = time_dim
        self.label_dim = label_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        in_dim = latent_dim + time_dim + label_dim
        sizes = [in_dim, hidden_dim, hidden_dim, hidden_dim, latent_dim]
        self.weights = [
            rng.standard_normal((sizes[i], sizes[i + 1])) * math.sqrt(2.0 / sizes[i])
            for i in range(len(sizes) - 1)
        ]
        self.biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        self.label_emb = rng.standard_normal((num_labels, label_dim)) * 0.1

    def check_label(self, label: int) -> None:
        if not 0 <= label < self.num_labels:
            raise ValueError(f"label {label} outside embedding table [0, {self.num_labels})")

    def _features(self, Z: Array, ts: Array, labels: Array) -> Array:
        temb = timestep_features(ts, self.time_dim)
        lemb = self.label_emb[labels]
        return np.concatenate([Z, temb, lemb], axis=1)

    def _forward(self, X: Array) -> tuple[Array, list[Array]]:
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, acts

    def predict_batch(self, Z: Array, ts: Array, labels: Array) -> Array:
        out, _ = self._forward(self._features(Z, ts, labels))
        return out

    def predict(self, z: Array, t: int, label: int) -> Array:
        """Deterministic forward pass for a single latent."""
        if t < 1:
            raise ValueError(f"timestep {t} must be >= 1")
        self.check_label(label)
        z = np.asarray(z, dtype=float)
        if z.shape != (self.latent_dim,):
            raise ValueError(f"latent shape {z.shape} != ({self.latent_dim},)")
        return self.predict_batch(z[None, :], np.array([t]), np.array([label]))[0]

    def _backward(self, acts: list[Array], dout: Array, labels: Array) -> dict[str, Array]:
        """Gradients of a scalar loss wrt all parameters, given d(loss)/d(output)."""
        grads: dict[str, Array] = {}
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads[f"W{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0.0)
        dX = delta @ self.weights[0].T
        dlemb = dX[:, self.latent_dim + self.time_dim :]
        demb = np.zeros_like(self.label_emb)
        np.add.at(demb, labels, dlemb)
        grads["label_emb"] = demb
        return grads

    def parameters(self) -> dict[str, Array]:
        params = {f"W{i}": W for i, W in enumerate(self.weights)}
        params.update({f"b{i}": b for i, b in enumerate(self.biases)})
        params["label_emb"] = self.label_emb
        return params

    def set_parameters(self, params: dict[str, Array]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = params[f"W{i}"]
            self.biases[i] = params[f"b{i}"]
        self.label_emb = params["label_emb"]

    def meta(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "num_labels": self.num_labels,
            "hidden_dim": self.hidden_dim,
            "time_dim": self.time_dim,
            "label_dim": self.label_dim,
        }

    @classmethod
    def from_tensors(cls, meta: dict, tensors: dict[str, Array]) -> "Denoiser":
        d = cls(
            latent_dim=int(meta["latent_dim"]),
            num_labels=int(meta["num_labels"]),
            hidden_dim=int(meta["hidden_dim"]),
            time_dim=int(meta["time_dim"]),
            label_dim=int(meta["label_dim"]),
        )
        d.set_parameters({k: tensors[k] for k in d.parameters()})
        return d


class Adam:
    """Standard Adam over a dict of named parameter arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, Array] = {}
        self.v: dict[str, Array] = {}

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> dict[str, Array]:
        self.step_count += 1
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name] = m
            self.v[name] = v
            mhat = m / (1.0 - self.beta1**self.step_count)
            vhat = v / (1.0 - self.beta2**self.step_count)
            out[name] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def train_denoiser(
    latents: Array,
    labels: Array,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    hidden_dim: int = 64,
    time_dim: int = 8,
    label_dim: int = 4,
    num_labels: int | None = None,
) -> tuple[Denoiser, list[float]]:
    """Fit the noise predictor by minimizing the squared error between the
    drawn noise and its prediction at uniformly random timesteps.

    Deterministic given cfg.seed. Returns the trained model and per-epoch
    mean losses (empty when epochs == 0).
    """
    cfg.validate()
    latents = np.asarray(latents, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise ValueError("training set must be a non-empty (n, d) array")
    if labels.shape != (latents.shape[0],):
        raise ValueError("labels must be one integer per training point")
    n_labels = int(labels.max()) + 1 if num_labels is None else num_labels
    if labels.min() < 0 or labels.max() >= n_labels:
        raise ValueError("labels outside embedding table range")

    rng = np.random.default_rng(cfg.seed)
    model = Denoiser(
        latent_dim=latents.shape[1],
        num_labels=n_labels,
        hidden_dim=hidden_dim,
        time_dim=time_dim,
        label_dim=label_dim,
        rng=rng,
    )
    optimizer = Adam(cfg.learning_rate)
    n = latents.shape[0]
    sqrt_ab = np.sqrt(schedule.alpha_bars)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bars)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            z0 = latents[idx]
            y = labels[idx]
            b = len(idx)
            ts = rng.integers(1, schedule.T + 1, size=b)
            eps = rng.standard_normal((b, latents.shape[1]))
            zt = sqrt_ab[ts - 1][:, None] * z0 + sqrt_1mab[ts - 1][:, None] * eps
            out, acts = model._forward(model._features(zt, ts, y))
            resid = out - eps
            loss = float(np.mean(resid**2))
            if not math.isfinite(loss):
                raise NumericalError(f"training loss diverged at epoch {epoch + 1}: {loss}")
            dout = 2.0 * resid / resid.size
            grads = model._backward(acts, dout, y)
            model.set_parameters(optimizer.step(model.parameters(), grads))
            total += loss * b
            count += b
        losses.append(total / count)
    return model, losses


def predict_noise(d: Denoiser, z_t: Array, t: int, label: int) -> Array:
    """Noise prediction for one latent at timestep t under the given label."""
    return d.predict(z_t, t, label)


def denoise_step(
    d: Denoiser,
    z_t: Array,
    t: int,
    label: int,
    schedule: NoiseSchedule,
    noise: Array | None,
) -> Array:
    """One reverse step: posterior mean from the predicted noise, plus scaled
    fresh noise for t > 1. The step at t = 1 is deterministic.
    """
    schedule.check_timestep(t)
    z_t = np.asarray(z_t, dtype=float)
    eps_hat = predict_noise(d, z_t, t, label)
    beta = float(schedule.betas[t - 1])
    alpha = float(schedule.alphas[t - 1])
    ab = schedule.alpha_bar(t)
    mean = (z_t - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
    if t > 1:
        if noise is None:
            raise ValueError("noise required for timesteps t > 1")
        noise = np.asarray(noise, dtype=float)
        ab_prev = schedule.alpha_bar(t - 1)
        var = beta * (1.0 - ab_prev) / (1.0 - ab)
        out = mean + math.sqrt(var) * noise
    else:
        out = mean
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"denoise step at t={t} produced non-finite values")
    return out


def sample(
    d: Denoiser,
    label: int,
    schedule: NoiseSchedule,
    seed,
    method: str = "ancestral",
) -> Array:
    """Draw z_T from a standard Gaussian and run the reverse chain down to z_0."""
    if method != "ancestral":
        raise ValueError(f"sampler {method!r} not available (only 'ancestral' is implemented)")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(d.latent_dim)
    for t in range(schedule.T, 0, -1):
        noise = rng.standard_normal(d.latent_dim) if t > 1 else None
        z = denoise_step(d, z, t, label, schedule, noise)
    return z


def save_denoiser(path, d: Denoiser, schedule: NoiseSchedule) -> None:
    """Write a joint model+schedule checkpoint."""
    from .checkpoint import save_checkpoint

    tensors = dict(d.parameters())
    tensors["schedule_betas"] = schedule.betas
    save_checkpoint(path, "denoiser", d.meta(), tensors)


def load_denoiser(path) -> tuple[Denoiser, NoiseSchedule]:
    from .checkpoint import load_checkpoint

    kind, meta, tensors = load_checkpoint(path)
    if kind != "denoiser":
        raise ValueError(f"{path}: expected a denoiser checkpoint, got kind {kind!r}")
    betas = tensors.pop("schedule_betas")
    alphas = 1.0 - betas
    schedule = NoiseSchedule(T=len(betas), betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))
    return Denoiser.from_tensors(meta, tensors), schedule
