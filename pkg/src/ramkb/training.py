"""Negative corruption, batch loss/gradients, Adam, and the training loop."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import (
    GradientBuffer,
    GroupSpec,
    backward_group,
    forward_group,
    group_losses,
    split_groups,
)
from .errors import ConfigError, NumericError
from .kb import Fact, KnowledgeBase
from .mathcore import make_rng
from .model import ModelConfig, ModelParams, ScoreContext

log = logging.getLogger("ramkb.training")

_STREAM_SHUFFLE = 1
_STREAM_FACT = 2

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    `negatives` is either "full" (every other entity is a candidate) or an
    integer count of sampled corruptions per position.
    """

    batch_size: int = 64
    learning_rate: float = 0.003
    decay_rate: float = 0.995
    dropout: float = 0.2
    max_epochs: int = 200
    patience: int = 10
    eval_every: int = 5
    negatives: str | int = "full"
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError("decay_rate must be in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if isinstance(self.negatives, str):
            if self.negatives != "full":
                raise ConfigError(
                    f"negatives must be 'full' or an integer, got {self.negatives!r}"
                )
        elif self.negatives < 1:
            raise ConfigError("sampled negatives count must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "decay_rate": self.decay_rate,
            "dropout": self.dropout,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "eval_every": self.eval_every,
            "negatives": self.negatives,
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def corrupt(
    fact: Fact,
    position: int,
    n_entities: int,
    negatives: str | int = "full",
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Corruption candidates at one position, excluding the true entity.

    Full mode returns every other entity; sampled mode draws the requested
    number of distinct entities uniformly (clipped to n_entities - 1).
    Candidates that happen to form true facts are not removed: the loss
    trains against all corruptions.
    """
    true = fact.entities[position]
    if negatives == "full":
        out = np.arange(n_entities - 1, dtype=np.intp)
        out[out >= true] += 1
        return out
    n = min(int(negatives), n_entities - 1)
    if rng is None:
        raise ConfigError("sampled corruption needs an rng")
    draw = rng.choice(n_entities - 1, size=n, replace=False).astype(np.intp)
    draw[draw >= true] += 1
    return draw


def apply_dropout(
    ctx: ScoreContext, dropout_p: float, rng: np.random.Generator
) -> ScoreContext:
    """Inverted dropout on the pattern-weighted entity vectors.

    Entries are zeroed independently with probability `dropout_p` and the
    survivors are scaled by 1/(1-p), so the masked score is an unbiased
    estimate of the plain one. Evaluation never applies this.
    """
    if not 0 <= dropout_p < 1:
        raise ConfigError(f"dropout must be in [0, 1), got {dropout_p}")
    if dropout_p == 0:
        return ctx
    keep = rng.random(ctx.weighted.shape) >= dropout_p
    masks = keep.astype(np.float64) / (1.0 - dropout_p)
    return replace_masks(ctx, masks)


def replace_masks(ctx: ScoreContext, masks: Optional[np.ndarray]) -> ScoreContext:
    return ScoreContext(
        rel=ctx.rel,
        entities=ctx.entities,
        role_emb=ctx.role_emb,
        patterns=ctx.patterns,
        weights=ctx.weights,
        ent_blocks=ctx.ent_blocks,
        weighted=ctx.weighted,
        masks=masks,
    )


def _group_candidates(
    spec: GroupSpec,
    facts: list[Fact],
    n_entities: int,
    negatives: str | int,
    fact_rngs: Optional[list[np.random.Generator]],
) -> Optional[np.ndarray]:
    """Candidate id array (B, a, 1 + n_neg) with column 0 the true entity."""
    if negatives == "full":
        return None
    n = min(int(negatives), n_entities - 1)
    b, a = spec.ents.shape
    cand = np.empty((b, a, n + 1), dtype=np.intp)
    for row, fact_idx in enumerate(spec.fact_index):
        fact = facts[fact_idx]
        rng = fact_rngs[fact_idx] if fact_rngs else None
        for pos in range(a):
            cand[row, pos, 0] = fact.entities[pos]
            cand[row, pos, 1:] = corrupt(fact, pos, n_entities, negatives, rng)
    return cand


def _group_masks(
    spec: GroupSpec,
    params: ModelParams,
    dropout: float,
    fact_rngs: Optional[list[np.random.Generator]],
) -> Optional[np.ndarray]:
    if dropout == 0 or fact_rngs is None:
        return None
    cfg = params.cfg
    b, a = spec.ents.shape
    n_terms = a * cfg.role_multiplicity * cfg.patterns_per_role
    masks = np.empty((b, n_terms, a, cfg.embed_dim))
    for row, fact_idx in enumerate(spec.fact_index):
        keep = fact_rngs[fact_idx].random((n_terms, a, cfg.embed_dim)) >= dropout
        masks[row] = keep.astype(np.float64) / (1.0 - dropout)
    return masks


def batch_loss(
    params: ModelParams,
    facts: list[Fact],
    negatives: str | int = "full",
    candidates: Optional[dict[int, Optional[np.ndarray]]] = None,
    masks: Optional[dict[int, Optional[np.ndarray]]] = None,
    fact_rngs: Optional[list[np.random.Generator]] = None,
) -> float:
    """Mean per-fact loss of a batch (forward only).

    `candidates`/`masks` may carry pre-built per-arity arrays so that
    repeated evaluations (for example finite differences) see exactly the
    same corruption sets and dropout draws.
    """
    total = 0.0
    basis_cache: dict = {}
    for spec in split_groups(params, facts):
        cand = (
            candidates[spec.arity]
            if candidates is not None
            else _group_candidates(spec, facts, params.n_entities, negatives, fact_rngs)
        )
        mask = masks[spec.arity] if masks is not None else None
        fwd = forward_group(params, spec, cand, mask, basis_cache)
        total += float(group_losses(fwd).sum())
    return total / len(facts)


def fact_loss(
    params: ModelParams, fact: Fact, negatives: str | int = "full",
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Multi-position cross-entropy loss of a single fact."""
    return batch_loss(params, [fact], negatives,
                      fact_rngs=[rng] if rng is not None else None)


def batch_backward(
    params: ModelParams,
    facts: list[Fact],
    negatives: str | int = "full",
    dropout: float = 0.0,
    fact_rngs: Optional[list[np.random.Generator]] = None,
    threads: int = 1,
) -> tuple[float, GradientBuffer]:
    """Mean batch loss and its exact gradient for every learnable slot."""
    if not facts:
        raise ConfigError("empty batch")
    scale = 1.0 / len(facts)

    def run_chunk(chunk_facts, chunk_rngs):
        buf = GradientBuffer(params)
        basis_cache: dict = {}
        total = 0.0
        for spec in split_groups(params, chunk_facts):
            cand = _group_candidates(
                spec, chunk_facts, params.n_entities, negatives, chunk_rngs
            )
            mask = _group_masks(spec, params, dropout, chunk_rngs)
            fwd = forward_group(params, spec, cand, mask, basis_cache)
            total += float(group_losses(fwd).sum())
            backward_group(params, fwd, buf, scale)
        return total, buf

    if threads <= 1 or len(facts) < 2 * threads:
        total, buf = run_chunk(facts, fact_rngs)
    else:
        chunks = np.array_split(np.arange(len(facts)), threads)
        jobs = []
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for chunk in chunks:
                if len(chunk) == 0:
                    continue
                sub_facts = [facts[i] for i in chunk]
                sub_rngs = [fact_rngs[i] for i in chunk] if fact_rngs else None
                jobs.append(pool.submit(run_chunk, sub_facts, sub_rngs))
        total = 0.0
        buf = GradientBuffer(params)
        for job in jobs:
            part_loss, part_buf = job.result()
            total += part_loss
            buf.merge(part_buf)

    loss = total * scale
    if not np.isfinite(loss):
        norms = {repr(k): float(np.linalg.norm(v)) for k, v in params.data.items()}
        raise NumericError(
            f"non-finite loss {loss} on batch of {len(facts)} facts; "
            f"first fact {facts[0]}; parameter norms {norms}"
        )
    return loss, buf


class AdamState:
    """Per-slot first/second moments with per-slot (or per-row) step counts."""

    def __init__(self) -> None:
        self.m1: dict = {}
        self.m2: dict = {}
        self.steps: dict = {}

    def _ensure(self, key, template: np.ndarray, row_sparse: bool) -> None:
        if key not in self.m1:
            self.m1[key] = np.zeros_like(template)
            self.m2[key] = np.zeros_like(template)
            self.steps[key] = (
                np.zeros(template.shape[0], dtype=np.int64) if row_sparse else 0
            )


def optimizer_step(
    params: ModelParams, buf: GradientBuffer, state: AdamState, lr: float
) -> None:
    """Sparse Adam update over the slots touched by the buffer."""
    for key, grad in buf.grads.items():
        target = params.data[key]
        row_sparse = key in buf.touched
        state._ensure(key, target, row_sparse)
        m1, m2 = state.m1[key], state.m2[key]
        if row_sparse:
            rows = np.flatnonzero(buf.touched[key])
            if rows.size == 0:
                continue
            state.steps[key][rows] += 1
            t = state.steps[key][rows]
            g = grad[rows]
            m1[rows] = ADAM_BETA1 * m1[rows] + (1 - ADAM_BETA1) * g
            m2[rows] = ADAM_BETA2 * m2[rows] + (1 - ADAM_BETA2) * g * g
            extra = (1,) * (target.ndim - 1)
            bc1 = (1 - ADAM_BETA1 ** t).reshape(t.shape + extra)
            bc2 = (1 - ADAM_BETA2 ** t).reshape(t.shape + extra)
            target[rows] -= lr * (m1[rows] / bc1) / (np.sqrt(m2[rows] / bc2) + ADAM_EPS)
        else:
            state.steps[key] += 1
            t = state.steps[key]
            m1 *= ADAM_BETA1
            m1 += (1 - ADAM_BETA1) * grad
            m2 *= ADAM_BETA2
            m2 += (1 - ADAM_BETA2) * grad * grad
            bc1 = 1 - ADAM_BETA1 ** t
            bc2 = 1 - ADAM_BETA2 ** t
            target -= lr * (m1 / bc1) / (np.sqrt(m2 / bc2) + ADAM_EPS)


@dataclass
class TraceRow:
    epoch: int
    seconds: float
    train_loss: float
    valid_mrr: Optional[float]


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[TraceRow]
    best_valid_mrr: Optional[float]


def train(
    kb: KnowledgeBase,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    progress: bool = False,
) -> TrainResult:
    """Mini-batch training with per-epoch decay and early stopping.

    Facts are reshuffled every epoch; every `eval_every` epochs the filtered
    MRR on the validation split is measured, the best-scoring parameters are
    kept, and training stops after `patience` evaluations without
    improvement. The returned trace has one row per epoch.
    """
    from .evaluation import evaluate  # local import to avoid a cycle

    if not kb.train:
        raise ConfigError("cannot train on an empty training split")
    params = ModelParams.init(model_cfg, kb.vocab, seed=train_cfg.seed)
    state = AdamState()
    lr = train_cfg.learning_rate
    needs_rng = train_cfg.dropout > 0 or train_cfg.negatives != "full"

    best_params = params.copy()
    best_mrr: Optional[float] = None
    evals_since_best = 0
    trace: list[TraceRow] = []
    start = time.perf_counter()
    facts = list(kb.train)

    for epoch in range(train_cfg.max_epochs):
        order = make_rng(train_cfg.seed, _STREAM_SHUFFLE, epoch).permutation(len(facts))
        epoch_loss = 0.0
        for lo in range(0, len(order), train_cfg.batch_size):
            idx = order[lo : lo + train_cfg.batch_size]
            batch = [facts[i] for i in idx]
            rngs = None
            if needs_rng:
                rngs = [
                    make_rng(train_cfg.seed, _STREAM_FACT, epoch, int(i)) for i in idx
                ]
            loss, buf = batch_backward(
                params,
                batch,
                negatives=train_cfg.negatives,
                dropout=train_cfg.dropout,
                fact_rngs=rngs,
                threads=train_cfg.threads,
            )
            optimizer_step(params, buf, state, lr)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(facts)
        lr *= train_cfg.decay_rate

        valid_mrr: Optional[float] = None
        if kb.valid and (epoch + 1) % train_cfg.eval_every == 0:
            report = evaluate(params, kb, split="valid", threads=train_cfg.threads)
            valid_mrr = report.mrr
            if best_mrr is None or valid_mrr > best_mrr:
                best_mrr = valid_mrr
                best_params = params.copy()
                evals_since_best = 0
            else:
                evals_since_best += 1
        trace.append(
            TraceRow(epoch + 1, time.perf_counter() - start, epoch_loss, valid_mrr)
        )
        if progress:
            log.info(
                "epoch %d: loss %.6f%s",
                epoch + 1,
                epoch_loss,
                f", valid MRR {valid_mrr:.4f}" if valid_mrr is not None else "",
            )
        if valid_mrr is not None and evals_since_best >= train_cfg.patience:
            log.info("early stop at epoch %d (best valid MRR %.4f)", epoch + 1, best_mrr)
            break

    if best_mrr is None:
        best_params = params
    return TrainResult(best_params, trace, best_mrr)


def write_trace_csv(trace: list[TraceRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,seconds,train_loss,valid_mrr\n")
        for row in trace:
            mrr = "" if row.valid_mrr is None else repr(row.valid_mrr)
            fh.write(f"{row.epoch},{row.seconds:.3f},{row.train_loss!r},{mrr}\n")
