"""Full-batch Adam training of the combined objective.

One run owns its model exclusively; everything is seeded and the loop is
deterministic in single-threaded mode. Ablation switches drop a loss term
from the graph entirely (so it contributes neither value nor gradient) or
swap per-layer fusion for a single output-level fusion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError
from .graphs import DEFAULT_KNN_K, DEFAULT_RADIUS, GraphPair
from .losses import LossBreakdown, contrastive_loss, spatial_reg_loss, total_loss, zinb_nll
from .model import (
    DEFAULT_DECODER_HIDDEN,
    DEFAULT_HIDDEN_DIMS,
    DEFAULT_LEAKY_SLOPE,
    ForwardTrace,
    ModelParams,
    encode,
    save_checkpoint,
    zinb_decode,
)


@dataclass
class TrainConfig:
    """Hyperparameters for one training run. Defaults follow the method's
    reference setting: lr 1e-3, weight decay 5e-4, 200 epochs, loss weights
    (1, 0.001, 0.01), temperature 0.5, radius 550, 15 feature neighbors."""

    lr: float = 0.001
    weight_decay: float = 5e-4
    epochs: int = 200
    alpha: float = 1.0
    lam: float = 0.001
    gamma: float = 0.01
    tau: float = 0.5
    seed: int = 0
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    radius: float = DEFAULT_RADIUS
    knn_k: int = DEFAULT_KNN_K
    decoder_hidden: int = DEFAULT_DECODER_HIDDEN
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    fusion_l2: bool = True
    contrastive_layers: str = "last"  # or "all": sum the term over every layer
    zinb_target: str = "preprocessed"  # or "counts": raw counts of the kept genes
    disable_fusion: bool = False
    disable_cl: bool = False
    disable_reg: bool = False
    disable_zinb: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if min(self.alpha, self.lam, self.gamma) < 0:
            raise ContractError("loss weights must be nonnegative")
        if self.weight_decay < 0:
            raise ContractError("weight decay must be nonnegative")
        if self.contrastive_layers not in ("last", "all"):
            raise ContractError(f"contrastive_layers must be last|all, got {self.contrastive_layers}")
        if self.zinb_target not in ("preprocessed", "counts"):
            raise ContractError(f"zinb_target must be preprocessed|counts, got {self.zinb_target}")
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "hidden_dims" in kwargs:
            kwargs["hidden_dims"] = tuple(kwargs["hidden_dims"])
        return cls(**kwargs)


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_table(self) -> str:
        lines = ["epoch,zinb,cl,reg,total,seconds"]
        for r in self.records:
            b = r.losses
            lines.append(f"{r.epoch},{b.zinb:.17g},{b.cl:.17g},{b.reg:.17g},"
                         f"{b.total:.17g},{r.seconds:.6f}")
        return "\n".join(lines) + "\n"

    def loss_table(self) -> str:
        """The deterministic columns only: what reruns must reproduce
        bitwise (wall-clock durations are inherently irreproducible)."""
        lines = ["epoch,zinb,cl,reg,total"]
        for r in self.records:
            b = r.losses
            lines.append(f"{r.epoch},{b.zinb:.17g},{b.cl:.17g},{b.reg:.17g},{b.total:.17g}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_table(), encoding="utf-8")


class Adam:
    """Adam with bias correction; L2 weight decay is added to the gradient
    before the moment updates (coupled form)."""

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError("adam step before gradients were populated")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay != 0.0:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)


class TrainResult(NamedTuple):
    params: ModelParams
    trace: ForwardTrace
    log: TrainLog


def trainable_tensors(params: ModelParams, cfg: TrainConfig) -> list[Tensor]:
    """Parameters that participate in the configured objective; ablations
    drop the tensors their disabled paths would leave without gradients."""
    tensors = list(params.spatial_weights) + list(params.feature_weights)
    if cfg.disable_fusion:
        tensors.append(params.attention_weights[-1])
    else:
        tensors.extend(params.attention_weights)
    if not cfg.disable_zinb:
        tensors += [params.decoder_hidden_w, params.decoder_hidden_b,
                    params.dropout_w, params.dropout_b,
                    params.mean_w, params.mean_b,
                    params.dispersion_w, params.dispersion_b]
    return tensors


def _reconstruction_target(dataset, cfg: TrainConfig) -> tuple[np.ndarray, bool]:
    """Matrix the decoder reconstructs, and whether it is integer counts."""
    if dataset.preprocessed is None:
        raise ContractError("dataset must be preprocessed before training")
    if cfg.zinb_target == "counts":
        if dataset.selected_idx is None:
            raise ContractError("counts target needs the kept-gene index from preprocessing")
        return dataset.counts[:, dataset.selected_idx], True
    return dataset.preprocessed, False


def run_epoch(x: Tensor, target: np.ndarray, target_is_counts: bool,
              graphs: GraphPair, params: ModelParams,
              cfg: TrainConfig) -> tuple[Tensor, LossBreakdown, ForwardTrace]:
    """One forward pass and loss assembly (no optimizer side effects)."""
    trace = encode(x, graphs.spatial_norm, graphs.feature_norm, params,
                   slope=cfg.leaky_slope, l2_after_softmax=cfg.fusion_l2,
                   per_layer_fusion=not cfg.disable_fusion)

    zinb_term = None
    if not cfg.disable_zinb:
        dropout, mean, dispersion = zinb_decode(trace.embedding, params)
        trace.dropout, trace.mean, trace.dispersion = dropout, mean, dispersion
        zinb_term = zinb_nll(target, dropout, mean, dispersion,
                             require_integer=target_is_counts)

    cl_term = None
    if not cfg.disable_cl:
        if cfg.contrastive_layers == "all":
            layer_terms = [
                contrastive_loss(zs, zf, cfg.tau)
                for zs, zf in zip(trace.spatial_embeddings, trace.feature_embeddings)
            ]
            cl_term = layer_terms[0]
            for t in layer_terms[1:]:
                cl_term = ad.add(cl_term, t)
        else:
            cl_term = contrastive_loss(trace.spatial_embeddings[-1],
                                       trace.feature_embeddings[-1], cfg.tau)

    reg_term = None
    if not cfg.disable_reg:
        # The regularizer is a sum over all N^2 - N ordered pairs; reduce it
        # to a per-pair mean so the configured weight is commensurate with
        # the mean-reduced reconstruction and contrastive terms.
        n = x.rows
        reg_term = ad.scale(spatial_reg_loss(trace.embedding, graphs.spatial),
                            1.0 / max(n * n - n, 1))

    total, breakdown = total_loss(zinb_term, cl_term, reg_term,
                                  cfg.alpha, cfg.lam, cfg.gamma)
    return total, breakdown, trace


def train(dataset, graphs: GraphPair, cfg: TrainConfig,
          checkpoint_dir=None, checkpoint_every: int = 0) -> TrainResult:
    """Train for ``cfg.epochs`` full-batch epochs and return the final
    parameters, a fresh post-training forward trace, and the loss log."""
    if cfg.disable_zinb and cfg.disable_cl and cfg.disable_reg:
        raise ContractError("all loss terms are disabled; nothing to train")
    target, target_is_counts = _reconstruction_target(dataset, cfg)
    x = Tensor(dataset.preprocessed)
    if graphs.spatial.n != x.rows:
        raise ContractError(f"graphs built for {graphs.spatial.n} spots, data has {x.rows}")

    rng = np.random.default_rng(cfg.seed)
    dims = [x.cols, *cfg.hidden_dims]
    params = ModelParams.initialize(rng, dims, recon_width=target.shape[1],
                                    decoder_hidden=cfg.decoder_hidden)
    optimizer = Adam(trainable_tensors(params, cfg), lr=cfg.lr,
                     weight_decay=cfg.weight_decay)
    log = TrainLog()

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        total, breakdown, _ = run_epoch(x, target, target_is_counts, graphs, params, cfg)
        for name, value in (("zinb", breakdown.zinb), ("cl", breakdown.cl),
                            ("reg", breakdown.reg), ("total", breakdown.total)):
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}: component '{name}' = {value}")
        optimizer.zero_grad()
        ad.backward(total)
        optimizer.step()
        log.records.append(EpochRecord(epoch, breakdown, time.perf_counter() - started))
        if checkpoint_dir is not None and checkpoint_every > 0 and epoch % checkpoint_every == 0:
            save_checkpoint(params, Path(checkpoint_dir) / f"params_epoch{epoch:05d}.txt")

    _, _, trace = run_epoch(x, target, target_is_counts, graphs, params, cfg)
    if checkpoint_dir is not None:
        save_checkpoint(params, Path(checkpoint_dir) / "params_final.txt")
    return TrainResult(params=params, trace=trace, log=log)
