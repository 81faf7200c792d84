"""Contrastive latent prior: unit-normalization, a single-layer projector,
and the InfoNCE-style loss that trains it to separate the positive
(anti-stereotypical) pool from the negative (stereotypical) pool.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import AutoEncoder, encode
from .diffusion import TrainConfig

Array = np.ndarray


def flatten_normalize(z: Array) -> Array:
    """Flatten row-major and scale to unit Euclidean norm. Rejects zero vectors."""
    v = np.asarray(z, dtype=float).reshape(-1)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def similarity(a: Array, b: Array) -> float:
    """Dot product of two equal-length vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


@dataclass
class Projector:
    """One fully connected layer; outputs are re-normalized to unit vectors."""

    weight: Array  # (proj_dim, in_dim)
    bias: Array  # (proj_dim,)

    @classmethod
    def init(cls, in_dim: int, proj_dim: int | None = None, rng: np.random.Generator | None = None) -> "Projector":
        proj_dim = in_dim if proj_dim is None else proj_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        weight = rng.standard_normal((proj_dim, in_dim)) / np.sqrt(in_dim)
        return cls(weight=weight, bias=np.zeros(proj_dim))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


def _project_raw(p: Projector, v: Array) -> Array:
    v = np.asarray(v, dtype=float)
    if v.shape != (p.in_dim,):
        raise ValueError(f"projector expects dimension {p.in_dim}, got {v.shape}")
    return p.weight @ v + p.bias


def project(p: Projector, v: Array) -> Array:
    """Affine map followed by re-normalization to the unit sphere."""
    u = _project_raw(p, v)
    n = float(np.linalg.norm(u))
    if n == 0.0:
        raise ValueError("projected vector has zero norm")
    return u / n


def nce_loss_from_sims(sim_pos: float, sim_negs: Array, tau: float) -> float:
    """-log( exp(sp/tau) / (exp(sp/tau) + sum_m exp(sn_m/tau)) ), computed stably."""
    if tau <= 0.0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    logits = np.concatenate([[sim_pos], np.asarray(sim_negs, dtype=float)]) / tau
    m = float(logits.max())
    return float(m + np.log(np.sum(np.exp(logits - m))) - sim_pos / tau)


def prior_loss(anchor_pos: Array, other_pos: Array, negatives: list[Array], p: Projector, tau: float) -> float:
    """Contrastive loss of one anchor against one positive and a batch of negatives,
    all passed through the projector and re-normalized before the dot products.
    """
    if len(negatives) == 0:
        raise ValueError("need at least one negative")
    pa = project(p, anchor_pos)
    pp = project(p, other_pos)
    pns = [project(p, n) for n in negatives]
    sim_pos = similarity(pa, pp)
    sim_negs = np.array([similarity(pa, pn) for pn in pns])
    return nce_loss_from_sims(sim_pos, sim_negs, tau)


def _normalize_vjp(u: Array, u_hat: Array, g_hat: Array) -> Array:
    """Pull a gradient back through v -> v/||v||: (I - uu^T/||u||^2) g / ||u||."""
    n = float(np.linalg.norm(u))
    return (g_hat - float(u_hat @ g_hat) * u_hat) / n


def prior_loss_gradients(
    anchor_pos: Array, other_pos: Array, negatives: list[Array], p: Projector, tau: float
) -> tuple[float, Array, Array]:
    """Loss plus its analytic gradients wrt the projector weight and bias.

    Composes the two-class-free softmax derivative, the re-normalization
    Jacobian, and the affine map for every projected vector.
    """
    if len(negatives) == 0:
        raise ValueError("need at least one negative")
    inputs = [np.asarray(anchor_pos, dtype=float), np.asarray(other_pos, dtype=float)] + [
        np.asarray(n, dtype=float) for n in negatives
    ]
    raws = [_project_raw(p, v) for v in inputs]
    norms = [float(np.linalg.norm(u)) for u in raws]
    if any(n == 0.0 for n in norms):
        raise ValueError("projected vector has zero norm")
    hats = [u / n for u, n in zip(raws, norms)]
    a_hat, p_hat, n_hats = hats[0], hats[1], hats[2:]

    sims = np.array([a_hat @ p_hat] + [a_hat @ nh for nh in n_hats])
    loss = nce_loss_from_sims(float(sims[0]), sims[1:], tau)
    logits = sims / tau
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    dsims = probs / tau
    dsims[0] -= 1.0 / tau  # d(-log softmax_0)/d(logit_0) = p_0 - 1

    g_hats = [np.zeros_like(a_hat) for _ in hats]
    g_hats[0] = dsims[0] * p_hat + sum(dn * nh for dn, nh in zip(dsims[1:], n_hats))
    g_hats[1] = dsims[0] * a_hat
    for k, _ in enumerate(n_hats):
        g_hats[2 + k] = dsims[1 + k] * a_hat

    dW = np.zeros_like(p.weight)
    db = np.zeros_like(p.bias)
    for v, u, u_hat, g_hat in zip(inputs, raws, hats, g_hats):
        g_u = _normalize_vjp(u, u_hat, g_hat)
        dW += np.outer(g_u, v)
        db += g_u
    return loss, dW, db


@dataclass
class SamplePools:
    """Encoded exemplar latents: anti-stereotypical positives, stereotypical negatives."""

    positives: Array  # (P, D)
    negatives: Array  # (N, D)

    def __post_init__(self):
        self.positives = np.atleast_2d(np.asarray(self.positives, dtype=float))
        self.negatives = np.atleast_2d(np.asarray(self.negatives, dtype=float))
        if self.positives.shape[0] == 0 or self.negatives.shape[0] == 0:
            raise ValueError("both exemplar pools must be non-empty")
        if self.positives.shape[1] != self.negatives.shape[1]:
            raise ValueError("positive and negative pools must share a dimension")

    @property
    def dim(self) -> int:
        return self.positives.shape[1]

    @classmethod
    def from_data(cls, ae: AutoEncoder, positive_points: Array, negative_points: Array) -> "SamplePools":
        """Encode raw exemplar data points into the latent space."""
        return cls(positives=encode(ae, np.atleast_2d(positive_points)),
                   negatives=encode(ae, np.atleast_2d(negative_points)))


def save_pools(path, pools: SamplePools) -> None:
    """One latent per row with a leading group label column."""
    from .reports import atomic_write_text, fmt_float

    dim = pools.dim
    lines = [",".join(["group"] + [f"z{i}" for i in range(dim)])]
    for row in pools.positives:
        lines.append(",".join(["positive"] + [fmt_float(x) for x in row]))
    for row in pools.negatives:
        lines.append(",".join(["negative"] + [fmt_float(x) for x in row]))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_pools(path) -> SamplePools:
    path = Path(path)
    pos, neg = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "group":
            raise ValueError(f"{path}: expected a pool CSV with a leading 'group' column")
        for row in reader:
            values = [float(x) for x in row[1:]]
            if row[0] == "positive":
                pos.append(values)
            elif row[0] == "negative":
                neg.append(values)
            else:
                raise ValueError(f"{path}: unknown group label {row[0]!r}")
    if not pos or not neg:
        raise ValueError(f"{path}: pool file must contain both positive and negative rows")
    return SamplePools(positives=np.array(pos), negatives=np.array(neg))


def train_projector(
    pools: SamplePools,
    cfg: TrainConfig,
    tau: float = 0.1,
    proj_dim: int | None = None,
) -> tuple[Projector, list[float]]:
    """Train the projector by SGD on the batch-mean contrastive loss.

    Each batch takes half its size (at least two) as a positive pair set and
    the remainder as negatives; every positive in the batch anchors once
    against the next positive, with the batch negatives shared. Deterministic
    given cfg.seed.
    """
    cfg.validate()
    if tau <= 0.0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    n_pos_batch = max(2, cfg.batch_size // 2)
    n_neg_batch = cfg.batch_size - n_pos_batch
    if n_neg_batch < 1:
        raise ValueError(f"batch_size {cfg.batch_size} too small for a positive pair plus a negative")
    P = pools.positives.shape[0]
    N = pools.negatives.shape[0]
    if P < 2:
        raise ValueError("positive pool too small to form one positive pair")

    rng = np.random.default_rng(cfg.seed)
    normed_pos = np.stack([flatten_normalize(v) for v in pools.positives])
    normed_neg = np.stack([flatten_normalize(v) for v in pools.negatives])
    projector = Projector.init(pools.dim, proj_dim, rng)
    losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(P)
        total = 0.0
        batches = 0
        for start in range(0, P - n_pos_batch + 1, n_pos_batch):
            pos_idx = order[start : start + n_pos_batch]
            neg_idx = rng.choice(N, size=n_neg_batch, replace=N < n_neg_batch)
            negs = [normed_neg[j] for j in neg_idx]
            batch_loss = 0.0
            dW = np.zeros_like(projector.weight)
            db = np.zeros_like(projector.bias)
            for k, i in enumerate(pos_idx):
                other = normed_pos[pos_idx[(k + 1) % len(pos_idx)]]
                loss, gW, gb = prior_loss_gradients(normed_pos[i], other, negs, projector, tau)
                batch_loss += loss
                dW += gW
                db += gb
            scale = 1.0 / len(pos_idx)
            projector = Projector(
                weight=projector.weight - cfg.learning_rate * scale * dW,
                bias=projector.bias - cfg.learning_rate * scale * db,
            )
            total += batch_loss * scale
            batches += 1
        losses.append(total / max(batches, 1))
    return projector, losses


def save_projector(path, p: Projector) -> None:
    from .checkpoint import save_checkpoint

    meta = {"in_dim": int(p.weight.shape[1]), "proj_dim": int(p.weight.shape[0])}
    save_checkpoint(path, "projector", meta, {"weight": p.weight, "bias": p.bias})


def load_projector(path) -> Projector:
    from .checkpoint import load_checkpoint

    kind, _, tensors = load_checkpoint(path)
    if kind != "projector":
        raise ValueError(f"{path}: expected a projector checkpoint, got kind {kind!r}")
    return Projector(weight=tensors["weight"], bias=tensors["bias"])
