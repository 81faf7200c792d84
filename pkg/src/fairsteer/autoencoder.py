"""Encoder/decoder pair mapping data space to the diffusion latent space.

Identity mode is the default (latent space == data space, exact round trip).
Linear mode is an affine encoder/decoder trained by minimizing mean squared
reconstruction error with hand-derived gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import Adam, TrainConfig
from .errors import NumericalError

Array = np.ndarray


@dataclass
class AutoEncoder:
    mode: str  # "identity" or "linear"
    data_dim: int
    latent_dim: int
    enc_weight: Array | None = None
    enc_bias: Array | None = None
    dec_weight: Array | None = None
    dec_bias: Array | None = None

    def __post_init__(self):
        if self.mode not in ("identity", "linear"):
            raise ValueError(f"unknown autoencoder mode {self.mode!r}")
        if self.mode == "identity" and self.data_dim != self.latent_dim:
            raise ValueError("identity mode requires data_dim == latent_dim")
        if self.mode == "linear":
            expected = {
                "enc_weight": (self.latent_dim, self.data_dim),
                "enc_bias": (self.latent_dim,),
                "dec_weight": (self.data_dim, self.latent_dim),
                "dec_bias": (self.data_dim,),
            }
            for name, shape in expected.items():
                arr = getattr(self, name)
                if arr is None or arr.shape != shape:
                    raise ValueError(f"linear mode needs {name} of shape {shape}")

    @classmethod
    def identity(cls, dim: int) -> "AutoEncoder":
        return cls(mode="identity", data_dim=dim, latent_dim=dim)


def encode(ae: AutoEncoder, x: Array) -> Array:
    """Map a data point (or stack of points) into latent space."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != ae.data_dim:
        raise ValueError(f"data dimension {x.shape[-1]} != {ae.data_dim}")
    if ae.mode == "identity":
        return x.copy()
    return x @ ae.enc_weight.T + ae.enc_bias


def decode(ae: AutoEncoder, z: Array) -> Array:
    """Map a latent (or stack of latents) back to data space."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != ae.latent_dim:
        raise ValueError(f"latent dimension {z.shape[-1]} != {ae.latent_dim}")
    if ae.mode == "identity":
        return z.copy()
    return z @ ae.dec_weight.T + ae.dec_bias


def reconstruction_loss(ae: AutoEncoder, data: Array) -> float:
    """Mean squared error of decode(encode(data)) against data."""
    data = np.asarray(data, dtype=float)
    resid = decode(ae, encode(ae, data)) - data
    return float(np.mean(resid**2))


def reconstruction_gradients(ae: AutoEncoder, data: Array) -> dict[str, Array]:
    """Analytic gradients of reconstruction_loss wrt the four linear-mode parameters."""
    if ae.mode != "linear":
        raise ValueError("gradients are defined for linear mode only")
    X = np.asarray(data, dtype=float)
    Z = X @ ae.enc_weight.T + ae.enc_bias
    resid = Z @ ae.dec_weight.T + ae.dec_bias - X
    dresid = 2.0 * resid / resid.size
    dZ = dresid @ ae.dec_weight
    return {
        "dec_weight": dresid.T @ Z,
        "dec_bias": dresid.sum(axis=0),
        "enc_weight": dZ.T @ X,
        "enc_bias": dZ.sum(axis=0),
    }


def train_autoencoder(data: Array, cfg: TrainConfig, latent_dim: int) -> tuple[AutoEncoder, list[float]]:
    """Fit a linear autoencoder by minibatch Adam on the reconstruction MSE.

    Identity mode has nothing to train; construct it with AutoEncoder.identity.
    """
    cfg.validate()
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty (n, d) array")
    if latent_dim < 1:
        raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
    n, d = data.shape
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / np.sqrt(d)
    ae = AutoEncoder(
        mode="linear",
        data_dim=d,
        latent_dim=latent_dim,
        enc_weight=rng.standard_normal((latent_dim, d)) * scale,
        enc_bias=np.zeros(latent_dim),
        dec_weight=rng.standard_normal((d, latent_dim)) * scale,
        dec_bias=np.zeros(d),
    )
    optimizer = Adam(cfg.learning_rate)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            loss = reconstruction_loss(ae, batch)
            if not np.isfinite(loss):
                raise NumericalError(f"autoencoder loss diverged at epoch {epoch + 1}: {loss}")
            grads = reconstruction_gradients(ae, batch)
            params = {
                "enc_weight": ae.enc_weight,
                "enc_bias": ae.enc_bias,
                "dec_weight": ae.dec_weight,
                "dec_bias": ae.dec_bias,
            }
            updated = optimizer.step(params, grads)
            ae.enc_weight = updated["enc_weight"]
            ae.enc_bias = updated["enc_bias"]
            ae.dec_weight = updated["dec_weight"]
            ae.dec_bias = updated["dec_bias"]
            total += loss * len(batch)
        losses.append(total / n)
    return ae, losses


def save_autoencoder(path, ae: AutoEncoder) -> None:
    from .checkpoint import save_checkpoint

    meta = {"mode": ae.mode, "data_dim": ae.data_dim, "latent_dim": ae.latent_dim}
    tensors = {}
    if ae.mode == "linear":
        tensors = {
            "enc_weight": ae.enc_weight,
            "enc_bias": ae.enc_bias,
            "dec_weight": ae.dec_weight,
            "dec_bias": ae.dec_bias,
        }
    save_checkpoint(path, "autoencoder", meta, tensors)


def load_autoencoder(path) -> AutoEncoder:
    from .checkpoint import load_checkpoint

    kind, meta, tensors = load_checkpoint(path)
    if kind != "autoencoder":
        raise ValueError(f"{path}: expected an autoencoder checkpoint, got kind {kind!r}")
    if meta["mode"] == "identity":
        return AutoEncoder.identity(int(meta["data_dim"]))
    return AutoEncoder(
        mode="linear",
        data_dim=int(meta["data_dim"]),
        latent_dim=int(meta["latent_dim"]),
        enc_weight=tensors["enc_weight"],
        enc_bias=tensors["enc_bias"],
        dec_weight=tensors["dec_weight"],
        dec_bias=tensors["dec_bias"],
    )
