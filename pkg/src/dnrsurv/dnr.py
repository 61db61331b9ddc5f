"""Divide-and-Rule objective over a linear encoder/decoder.

The total loss is ``mse + lam * (divide + rule)``. The similarity terms act on
the L2-normalized encoder output and compare it against the memory bank;
bank rows are constants for the gradient (stop-gradient). Training runs three
phases: reconstruction only, reconstruction + divide, then ``rounds`` rounds
of reconstruction + divide + rule with an entropy curriculum that moves the
lowest-entropy samples into the rule set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .embank import MemoryBank, NeighborSets, softmax_logits
from .errors import DivergedTraining, InvalidInput, MissingNeighbors

log = logging.getLogger(__name__)

_NORM_EPS = 1e-12


@dataclass
class LinearCodec:
    encoder: np.ndarray  # (d, D_in)
    decoder: np.ndarray  # (D_out, d)

    def __post_init__(self):
        self.encoder = np.array(self.encoder, dtype=float)
        self.decoder = np.array(self.decoder, dtype=float)
        if self.encoder.ndim != 2 or self.decoder.ndim != 2:
            raise InvalidInput("encoder and decoder must be matrices")
        if self.decoder.shape[1] != self.encoder.shape[0]:
            raise InvalidInput("decoder columns must match encoder rows")
        if not (np.all(np.isfinite(self.encoder)) and np.all(np.isfinite(self.decoder))):
            raise InvalidInput("codec entries must be finite")

    @classmethod
    def init(cls, d_in, d_out, latent_dim, seed=0) -> "LinearCodec":
        rng = np.random.default_rng(seed)
        enc = rng.standard_normal((latent_dim, d_in)) / np.sqrt(d_in)
        dec = rng.standard_normal((d_out, latent_dim)) / np.sqrt(latent_dim)
        return cls(enc, dec)

    @property
    def latent_dim(self):
        return self.encoder.shape[0]

    def encode(self, u):
        return np.asarray(u, dtype=float) @ self.encoder.T

    def embed(self, u):
        """Unit-norm latent codes."""
        y = self.encode(u)
        return y / np.maximum(np.linalg.norm(y, axis=-1, keepdims=True), _NORM_EPS)

    def reconstruct(self, u):
        return self.encode(u) @ self.decoder.T


@dataclass
class LossReport:
    mse: float
    divide: float
    rule: float
    lam: float
    total: float = field(default=None)
    epoch: int = -1
    phase: str = ""

    def __post_init__(self):
        if self.total is None:
            self.total = self.mse + self.lam * (self.divide + self.rule)


@dataclass
class EntropyPartition:
    entropies: np.ndarray
    instance_set: frozenset
    expansion_set: frozenset
    round: int
    total_rounds: int

    @property
    def instance_mask(self) -> np.ndarray:
        m = np.zeros(len(self.entropies), dtype=bool)
        m[list(self.instance_set)] = True
        return m


def _as_batch(v):
    a = np.asarray(v, dtype=float)
    return a[None, :] if a.ndim == 1 else a


def mse_loss(codec: LinearCodec, he_input, rgb_target):
    """Mean squared reconstruction error and its gradients.

    Returns ``(loss, grad_encoder, grad_decoder)``. Inputs may be single
    vectors or row batches; the mean runs over every target element.
    """
    u, x = _as_batch(he_input), _as_batch(rgb_target)
    if u.shape[0] != x.shape[0] or u.shape[1] != codec.encoder.shape[1] or x.shape[1] != codec.decoder.shape[0]:
        raise InvalidInput(
            f"dimension mismatch: input {u.shape}, target {x.shape}, "
            f"encoder {codec.encoder.shape}, decoder {codec.decoder.shape}")
    y = u @ codec.encoder.T
    r = y @ codec.decoder.T - x
    scale = 2.0 / r.size
    loss = float(np.mean(r * r))
    g_dec = scale * r.T @ y
    g_y = scale * r @ codec.decoder
    g_enc = g_y.T @ u
    return loss, g_enc, g_dec


def _positive_sets(neighbors: NeighborSets, batch, expanded):
    out = []
    for i in batch:
        p = neighbors.positives(int(i), expanded=expanded)
        p = p - {int(i)}
        if not p:
            raise MissingNeighbors(f"sample {i} has no positives")
        out.append(p)
    return out


def _similarity_loss(bank: MemoryBank, neighbors: NeighborSets, batch, live, expanded):
    batch = np.asarray(list(batch), dtype=int)
    if batch.size == 0:
        return 0.0, np.zeros((0, bank.dim))
    z = bank.vectors[batch] if live is None else _as_batch(live)
    if z.shape != (batch.size, bank.dim):
        raise InvalidInput(f"live embeddings must have shape {(batch.size, bank.dim)}")
    pos = _positive_sets(neighbors, batch, expanded)

    s = bank.logits(z)
    rows_b = np.arange(batch.size)
    if not bank.include_self:
        s[rows_b, batch] = -np.inf
    # positives as flat (row, column) pairs; the sets are small compared to N
    pr = np.concatenate([np.full(len(p), r) for r, p in enumerate(pos)])
    pc = np.concatenate([np.fromiter(p, dtype=int, count=len(p)) for p in pos])

    s -= s.max(axis=1, keepdims=True)
    w = np.exp(s, out=s)
    denom = w.sum(axis=1)
    w_pos = w[pr, pc]
    num = np.bincount(pr, weights=w_pos, minlength=batch.size)
    with np.errstate(divide="ignore"):
        loss = float(np.sum(np.log(denom) - np.log(num)))

    # grad = (sum_k p_k v_k - sum_{j in P} q_j v_j) / tau
    grad = (w @ bank.vectors) / denom[:, None]
    pos_term = np.zeros_like(grad)
    np.add.at(pos_term, pr, (w_pos / num[pr])[:, None] * bank.vectors[pc])
    grad = (grad - pos_term) / bank.temperature
    return loss, grad


def divide_loss(bank: MemoryBank, neighbors: NeighborSets, batch, live=None):
    """-sum_i log sum_{j in S_i} p(j|i) over ``batch``.

    ``live`` holds the current (differentiable) embedding of each batch sample,
    one row per id; when omitted the bank rows themselves are used. Returns
    ``(loss, grad)`` with ``grad`` of shape ``(len(batch), d)``.
    """
    return _similarity_loss(bank, neighbors, batch, live, expanded=False)


def rule_loss(bank: MemoryBank, neighbors: NeighborSets, batch, live=None):
    """Same as :func:`divide_loss` with positives S_i | N_i."""
    return _similarity_loss(bank, neighbors, batch, live, expanded=True)


def compute_entropy(bank: MemoryBank, i: int, exclude_self=True) -> float:
    s = bank.logits(bank.vectors[i])
    if exclude_self:
        s = np.delete(s, i)
    p = softmax_logits(s)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def all_entropies(bank: MemoryBank, exclude_self=True, block=1024) -> np.ndarray:
    n = bank.size
    out = np.empty(n)
    for start in range(0, n, block):
        rows = np.arange(start, min(start + block, n))
        s = bank.logits(bank.vectors[rows])
        if exclude_self:
            s[np.arange(rows.size), rows] = -np.inf
        p = softmax_logits(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[rows] = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=1)
    return out


def schedule_partition(entropies, round, total_rounds, previous: EntropyPartition | None = None) -> EntropyPartition:
    """Move the ``floor(N * round / total_rounds)`` lowest-entropy samples to the rule set.

    With ``previous`` the samples already admitted stay admitted and the
    remaining budget is filled by ascending entropy among the others, so the
    expansion sets of successive rounds are nested. Ties go to lower ids.
    """
    if not 1 <= round <= total_rounds:
        raise InvalidInput("round must lie in [1, total_rounds]")
    h = np.asarray(entropies, dtype=float)
    n = h.size
    ids = np.arange(n)
    n_exp = (n * round) // total_rounds
    admitted = np.zeros(n, dtype=bool)
    if previous is not None:
        if len(previous.entropies) != n:
            raise InvalidInput("previous partition covers a different number of samples")
        admitted[list(previous.expansion_set)] = True
    # admitted samples sort first, then ascending entropy, then id
    order = np.lexsort((ids, h, ~admitted))
    n_exp = max(n_exp, int(admitted.sum()))
    expansion = frozenset(int(i) for i in order[:n_exp])
    instance = frozenset(int(i) for i in order[n_exp:])
    return EntropyPartition(h, instance, expansion, round, total_rounds)


@dataclass
class TrainConfig:
    latent_dim: int = 8
    epochs_pretrain: int = 20
    epochs_divide: int = 20
    epochs_rule: int = 20
    rounds: int = 3
    lam: float = 1e-3
    tau: float = 0.5
    lr: float = 2.0
    batch_size: int = 256
    momentum: float = 0.5
    k_neighbors: int = 5
    include_self: bool = True
    entropy_exclude_self: bool = True
    seed: int = 0


@dataclass
class TrainResult:
    codec: LinearCodec
    bank: MemoryBank
    trace: list
    partitions: list
    neighbors: NeighborSets


def objective(codec: LinearCodec, u, x, ids, bank: MemoryBank, neighbors: NeighborSets,
              lam: float, instance_mask=None, use_similarity=True):
    """Batch loss and gradients w.r.t. the codec.

    ``instance_mask[i]`` is True for samples treated by the divide loss; the
    rest of the batch goes to the rule loss. Returns
    ``(report, grad_encoder, grad_decoder, z)`` with ``z`` the normalized codes.
    """
    u, x = _as_batch(u), _as_batch(x)
    ids = np.asarray(ids, dtype=int)
    mse, g_enc, g_dec = mse_loss(codec, u, x)
    y = u @ codec.encoder.T
    ny = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), _NORM_EPS)
    z = y / ny
    div = rul = 0.0
    if use_similarity:
        inst = np.ones(ids.size, dtype=bool) if instance_mask is None else np.asarray(instance_mask)[ids]
        g_z = np.zeros_like(z)
        if inst.any():
            div, g = divide_loss(bank, neighbors, ids[inst], z[inst])
            g_z[inst] = g
        if (~inst).any():
            rul, g = rule_loss(bank, neighbors, ids[~inst], z[~inst])
            g_z[~inst] = g
        # back through z = y / |y|
        g_y = (g_z - z * np.sum(g_z * z, axis=1, keepdims=True)) / ny
        g_enc = g_enc + lam * (g_y.T @ u)
    return LossReport(mse, div, rul, lam), g_enc, g_dec, z


def train(features, spatial, config: TrainConfig | None = None, targets=None,
          codec: LinearCodec | None = None) -> TrainResult:
    """Fit the codec with the three-phase schedule.

    Parameters
    ----------
    features : (N, D_in) array
        Encoder inputs (HE-space features).
    spatial : dict
        Spatial sets S_i keyed by row index.
    targets : (N, D_out) array, optional
        Reconstruction targets; defaults to ``features``.
    """
    cfg = config or TrainConfig()
    u = np.asarray(features, dtype=float)
    x = u if targets is None else np.asarray(targets, dtype=float)
    n = u.shape[0]
    if x.shape[0] != n:
        raise InvalidInput("features and targets must have the same number of rows")
    rng = np.random.default_rng(cfg.seed)
    if codec is None:
        codec = LinearCodec.init(u.shape[1], x.shape[1], cfg.latent_dim, seed=rng.integers(2**63))
    else:
        codec = LinearCodec(codec.encoder.copy(), codec.decoder.copy())
    bank = MemoryBank.random(n, codec.latent_dim, seed=rng.integers(2**63), momentum=cfg.momentum,
                             temperature=cfg.tau, include_self=cfg.include_self)
    neighbors = NeighborSets(spatial={int(k): frozenset(v) for k, v in spatial.items()})
    trace, partitions = [], []
    epoch = 0

    def run_epochs(n_epochs, phase, instance_mask, use_similarity):
        with np.errstate(over="ignore", invalid="ignore"):
            _run_epochs(n_epochs, phase, instance_mask, use_similarity)

    def _run_epochs(n_epochs, phase, instance_mask, use_similarity):
        nonlocal epoch
        for _ in range(n_epochs):
            order = rng.permutation(n)
            sums = np.zeros(3)
            n_batches = 0
            for start in range(0, n, cfg.batch_size):
                ids = order[start:start + cfg.batch_size]
                rep, g_enc, g_dec, z = objective(codec, u[ids], x[ids], ids, bank, neighbors,
                                                 cfg.lam, instance_mask, use_similarity)
                if not np.isfinite(rep.total):
                    raise DivergedTraining(epoch)
                codec.encoder -= cfg.lr * g_enc
                codec.decoder -= cfg.lr * g_dec
                bank.update_many(ids, z)
                sums += (rep.mse, rep.divide, rep.rule)
                n_batches += 1
            mse, div, rul = sums / n_batches
            report = LossReport(mse, div, rul, cfg.lam, epoch=epoch, phase=phase)
            if not (np.isfinite(report.total) and np.all(np.isfinite(codec.encoder))
                    and np.all(np.isfinite(codec.decoder))):
                raise DivergedTraining(epoch)
            trace.append(report)
            log.debug("epoch %d %s mse=%.6g divide=%.6g rule=%.6g", epoch, phase, mse, div, rul)
            epoch += 1

    run_epochs(cfg.epochs_pretrain, "pretrain", None, False)
    run_epochs(cfg.epochs_divide, "divide", None, True)
    for r in range(1, cfg.rounds + 1):
        h = all_entropies(bank, exclude_self=cfg.entropy_exclude_self)
        part = schedule_partition(h, r, cfg.rounds, partitions[-1] if partitions else None)
        partitions.append(part)
        neighbors.feature = bank.all_top_k(min(cfg.k_neighbors, n - 1))
        run_epochs(cfg.epochs_rule, f"rule{r}", part.instance_mask, True)
    return TrainResult(codec, bank, trace, partitions, neighbors)


def mean_spatial_similarity(embeddings, spatial) -> float:
    """Mean cosine similarity over all (i, j in S_i) pairs."""
    z = np.asarray(embeddings, dtype=float)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    total, count = 0.0, 0
    for i, s in spatial.items():
        if s:
            js = np.fromiter(s, dtype=int)
            total += float(np.sum(z[js] @ z[int(i)]))
            count += js.size
    if count == 0:
        raise MissingNeighbors("no spatial pairs")
    return total / count
