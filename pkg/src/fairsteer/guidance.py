"""Inference-time latent correction.

Two contrastive guidance losses pull the current latent toward noised
positive exemplars and away from noised negative ones; their analytic
gradient with respect to the latent drives an extra update inside a
configurable window of low-noise sampling steps.

Sampling steps are counted 1..T in sampling order: step 1 consumes the
noisiest latent (diffusion timestep T), step T produces the final output
(diffusion timestep 1). The correction window is an inclusive interval of
sampling steps; window_start > window_end disables correction entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .autoencoder import AutoEncoder
from .diffusion import Denoiser, NoiseSchedule, denoise_step, forward_sample
from .prior import Projector, SamplePools, flatten_normalize, nce_loss_from_sims, project, similarity

Array = np.ndarray


@dataclass
class GuidanceConfig:
    lambda_tc: float = 9.0  # weight of the projected (prior) loss
    lambda_c: float = 150.0  # weight of the direct loss
    eta: float = 2.0  # latent update step size
    tau_prime: float = 0.1  # guidance temperature
    window_start: int = 26  # first corrected sampling step (inclusive)
    window_end: int = 30  # last corrected sampling step (inclusive)
    pools_per_step: int = 1  # exemplar pairs drawn per corrected step
    double_application: bool = True  # re-apply the denoiser to the updated latent

    @property
    def window_enabled(self) -> bool:
        return self.window_start <= self.window_end

    def in_window(self, step: int) -> bool:
        return self.window_start <= step <= self.window_end

    def validate(self, T: int | None = None) -> None:
        if self.lambda_tc < 0.0 or self.lambda_c < 0.0:
            raise ValueError("loss weights must be >= 0")
        if self.eta < 0.0:
            raise ValueError(f"step size must be >= 0, got {self.eta}")
        if self.tau_prime <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.tau_prime}")
        if self.pools_per_step < 1:
            raise ValueError(f"pools_per_step must be >= 1, got {self.pools_per_step}")
        if T is not None and self.window_enabled:
            if self.window_start < 1 or self.window_end > T:
                raise ValueError(
                    f"window [{self.window_start}, {self.window_end}] outside sampling steps [1, {T}]"
                )


@dataclass
class GuidanceContext:
    """Trained components plus the per-chain random source for exemplar draws."""

    projector: Projector | None
    pools: SamplePools
    autoencoder: AutoEncoder
    schedule: NoiseSchedule
    rng: np.random.Generator

    def validate(self, latent_dim: int, cfg: GuidanceConfig) -> None:
        if self.pools.dim != latent_dim:
            raise ValueError(f"pool dimension {self.pools.dim} != latent dimension {latent_dim}")
        if cfg.lambda_tc > 0.0:
            if self.projector is None:
                raise ValueError("prior loss weight is positive but no projector is set")
            if self.projector.in_dim != latent_dim:
                raise ValueError(
                    f"projector input dimension {self.projector.in_dim} != latent dimension {latent_dim}"
                )


def direct_loss(z_t: Array, zp_t: Array, zn_t: Array, tau_prime: float) -> float:
    """Two-class contrastive loss between the unit-normalized latent and the
    noised positive/negative exemplars."""
    zt = flatten_normalize(z_t)
    zp = flatten_normalize(zp_t)
    zn = flatten_normalize(zn_t)
    return nce_loss_from_sims(similarity(zt, zp), np.array([similarity(zt, zn)]), tau_prime)


def prior_guidance_loss(z_t: Array, zp_t: Array, zn_t: Array, p: Projector, tau_prime: float) -> float:
    """Same two-class form as direct_loss, but on projector outputs."""
    zt = project(p, flatten_normalize(z_t))
    zp = project(p, flatten_normalize(zp_t))
    zn = project(p, flatten_normalize(zn_t))
    return nce_loss_from_sims(similarity(zt, zp), np.array([similarity(zt, zn)]), tau_prime)


def total_loss(z_t: Array, zp_t: Array, zn_t: Array, p: Projector | None, cfg: GuidanceConfig) -> float:
    """lambda_tc * prior loss + lambda_c * direct loss. Terms with zero weight
    are skipped, so a projector is only required when lambda_tc > 0."""
    out = 0.0
    if cfg.lambda_c > 0.0:
        out += cfg.lambda_c * direct_loss(z_t, zp_t, zn_t, cfg.tau_prime)
    if cfg.lambda_tc > 0.0:
        if p is None:
            raise ValueError("prior loss weight is positive but no projector was given")
        out += cfg.lambda_tc * prior_guidance_loss(z_t, zp_t, zn_t, p, cfg.tau_prime)
    return out


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def loss_gradient(z_t: Array, zp_t: Array, zn_t: Array, p: Projector | None, cfg: GuidanceConfig) -> Array:
    """Exact analytic gradient of total_loss with respect to z_t.

    The exemplars are treated as constants. The gradient composes, per term,
    the two-class softmax derivative, an optional projector layer with its
    re-normalization Jacobian, and the normalization Jacobian
    (I - zz^T/||z||^2)/||z|| of the latent itself; it is therefore orthogonal
    to z_t and invariant to positive rescaling of z_t.
    """
    z = np.asarray(z_t, dtype=float).reshape(-1)
    nz = float(np.linalg.norm(z))
    if nz == 0.0:
        raise ValueError("cannot normalize a zero vector")
    zt = z / nz
    g_tilde = np.zeros_like(zt)
    tau = cfg.tau_prime
    if cfg.lambda_c > 0.0:
        zp = flatten_normalize(zp_t)
        zn = flatten_normalize(zn_t)
        sig = _sigmoid((similarity(zt, zn) - similarity(zt, zp)) / tau)
        g_tilde += cfg.lambda_c * (sig / tau) * (zn - zp)
    if cfg.lambda_tc > 0.0:
        if p is None:
            raise ValueError("prior loss weight is positive but no projector was given")
        u = p.weight @ zt + p.bias
        nu = float(np.linalg.norm(u))
        if nu == 0.0:
            raise ValueError("projected vector has zero norm")
        ut = u / nu
        up = project(p, flatten_normalize(zp_t))
        un = project(p, flatten_normalize(zn_t))
        sig = _sigmoid((similarity(ut, un) - similarity(ut, up)) / tau)
        g_hat = (sig / tau) * (un - up)
        g_u = (g_hat - float(ut @ g_hat) * ut) / nu
        g_tilde += cfg.lambda_tc * (p.weight.T @ g_u)
    return (g_tilde - float(zt @ g_tilde) * zt) / nz


def corrected_step(
    d: Denoiser,
    ctx: GuidanceContext,
    cfg: GuidanceConfig,
    z_t: Array,
    step: int,
    label: int,
    loss_log: list[tuple[int, float]] | None = None,
) -> Array:
    """One denoising step with in-window latent correction.

    Outside the window this is exactly one reverse step. Inside it, exemplars
    are drawn and noised to the current level, the combined guidance loss and
    its latent gradient are computed, the reverse-step output is shifted by
    -eta * gradient, and (by default) the denoiser is applied once more to the
    shifted latent.
    """
    schedule = ctx.schedule
    T = schedule.T
    if not 1 <= step <= T:
        raise ValueError(f"sampling step {step} outside [1, {T}]")
    cfg.validate(T)
    ctx.validate(d.latent_dim, cfg)
    t = T - step + 1
    rng = ctx.rng
    noise = rng.standard_normal(d.latent_dim) if t > 1 else None
    if not cfg.in_window(step):
        return denoise_step(d, z_t, t, label, schedule, noise)

    loss_sum = 0.0
    grad_sum = np.zeros(d.latent_dim)
    for _ in range(cfg.pools_per_step):
        z0p = ctx.pools.positives[rng.integers(ctx.pools.positives.shape[0])]
        z0n = ctx.pools.negatives[rng.integers(ctx.pools.negatives.shape[0])]
        zp_t = forward_sample(z0p, t, schedule, rng.standard_normal(d.latent_dim))
        zn_t = forward_sample(z0n, t, schedule, rng.standard_normal(d.latent_dim))
        loss_sum += total_loss(z_t, zp_t, zn_t, ctx.projector, cfg)
        grad_sum += loss_gradient(z_t, zp_t, zn_t, ctx.projector, cfg)
    loss = loss_sum / cfg.pools_per_step
    grad = grad_sum / cfg.pools_per_step
    if loss_log is not None:
        loss_log.append((step, loss))

    z_prime = denoise_step(d, z_t, t, label, schedule, noise) - cfg.eta * grad
    if not cfg.double_application:
        return z_prime
    noise2 = rng.standard_normal(d.latent_dim) if t > 1 else None
    return denoise_step(d, z_prime, t, label, schedule, noise2)


def guided_sample(
    d: Denoiser,
    ctx: GuidanceContext,
    cfg: GuidanceConfig,
    label: int,
    seed,
    loss_log: list[tuple[int, float]] | None = None,
) -> Array:
    """Full reverse trajectory applying corrected_step at every sampling step.

    Deterministic given the seed, and consumes random draws in the same order
    as the unguided sampler outside the window, so a guided and an unguided
    chain sharing a seed are identical at every step before the window.
    """
    cfg.validate(ctx.schedule.T)
    if cfg.window_enabled:
        ctx.validate(d.latent_dim, cfg)
    rng = np.random.default_rng(seed)
    chain_ctx = replace(ctx, rng=rng)
    z = rng.standard_normal(d.latent_dim)
    for step in range(1, ctx.schedule.T + 1):
        z = corrected_step(d, chain_ctx, cfg, z, step, label, loss_log)
    return z
