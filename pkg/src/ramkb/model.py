"""Model configuration, learnable parameters, and fact scoring.

A fact is scored as a sum of multilinear terms. Each term couples one role
embedding with the pattern-weighted embedding blocks of every entity in the
fact. Where the role embeddings and pattern matrices come from depends on
the mode:

* ``latent``   - role embeddings are convex combinations of shared basis
  vectors, pattern matrices are convex combinations of the (jointly
  softmaxed) shared basis matrices; both mixtures use the same softmaxed
  weight vector per (relation, role).
* ``explicit`` - every globally named role owns a free embedding vector and
  a raw pattern matrix that is softmax-normalized at use time.
* ``preset``   - pattern matrices and term signs are frozen to the constants
  that reproduce DistMult / SimplE / ComplEx / QuatE; role embeddings are
  free vectors.
* ``extended`` - several role embeddings per role and several pattern
  matrices per role embedding, combined with learnable per-term weights.
* ``raw``      - role embeddings and pattern matrices are stored and used
  verbatim without any normalization; only used by the expressiveness
  construction, never trained.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .kb import Fact, Vocabulary
from .mathcore import make_rng, softmax_last_axis, softmax_matrix
from .presets import PRESET_DIMS, PRESET_KINDS, preset_patterns

MODES = ("latent", "explicit", "preset", "extended", "raw")

INIT_STD = 0.1
_STREAM_INIT = 0


@dataclass
class ModelConfig:
    """Dimensions and variant flags of the scoring model."""

    embed_dim: int = 25
    multiplicity: int = 2
    latent_size: int = 10
    mode: str = "latent"
    preset: Optional[str] = None
    role_multiplicity: int = 1
    patterns_per_role: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "preset":
            if self.preset not in PRESET_KINDS:
                raise ConfigError(
                    f"preset mode needs preset in {PRESET_KINDS}, got {self.preset!r}"
                )
            m, mg, npm = PRESET_DIMS[self.preset]
            self.multiplicity = m
            self.role_multiplicity = mg
            self.patterns_per_role = npm
        elif self.preset is not None:
            raise ConfigError("preset kind given but mode is not 'preset'")
        if self.mode != "extended" and self.mode != "preset":
            if self.role_multiplicity != 1 or self.patterns_per_role != 1:
                raise ConfigError(
                    "role_multiplicity/patterns_per_role require extended or preset mode"
                )
        if min(self.embed_dim, self.multiplicity, self.latent_size) < 1:
            raise ConfigError("embed_dim, multiplicity and latent_size must be >= 1")
        if min(self.role_multiplicity, self.patterns_per_role) < 1:
            raise ConfigError("role_multiplicity and patterns_per_role must be >= 1")

    @classmethod
    def parse_mode(cls, text: str) -> tuple[str, Optional[str]]:
        """Split a mode string like ``preset:QuatE`` into (mode, preset)."""
        if text.startswith("preset:"):
            return "preset", text.split(":", 1)[1]
        if text == "preset":
            raise ConfigError("preset mode needs a kind, e.g. preset:DistMult")
        return text, None

    def mode_string(self) -> str:
        return f"preset:{self.preset}" if self.mode == "preset" else self.mode

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "multiplicity": self.multiplicity,
            "latent_size": self.latent_size,
            "mode": self.mode,
            "preset": self.preset,
            "role_multiplicity": self.role_multiplicity,
            "patterns_per_role": self.patterns_per_role,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


SlotKey = tuple


class ModelParams:
    """All learnable arrays, stored per parameter slot.

    Slot keys:

    * ``("ent",)``            entity blocks, shape (n_entities, m, d)
    * ``("basis_u",)``        latent basis vectors, (K, d)
    * ``("basis_p", a)``      raw latent basis matrices per arity, (K, a, m)
    * ``("alpha", r)``        role mixing weights, (a_r, mg, K)
    * ``("beta", r)``         pattern mixing weights, (a_r, mg, npm, K)
    * ``("omega", r)``        per-term weights, (a_r, mg, npm)
    * ``("role_vec",)``       explicit role embeddings, (n_roles, d)
    * ``("role_pat", a)``     explicit raw pattern matrices, (n_roles, a, m)
    * ``("preset_u", r)``     free role embeddings in preset mode, (2, mg, d)

    ``("ent",)``, ``("role_vec",)`` and ``("role_pat", a)`` are row-sparse:
    the optimizer updates only rows touched by a batch.
    """

    ROW_SPARSE = ("ent", "role_vec", "role_pat")

    def __init__(
        self,
        cfg: ModelConfig,
        n_entities: int,
        rel_arity: list[int],
        rel_roles: Optional[dict[int, tuple[int, ...]]] = None,
        n_roles: int = 0,
    ) -> None:
        self.cfg = cfg
        self.n_entities = n_entities
        self.rel_arity = list(rel_arity)
        self.arities = tuple(sorted(set(rel_arity)))
        self.rel_roles = dict(rel_roles or {})
        self.n_roles = n_roles
        self.data: dict[SlotKey, np.ndarray] = {}
        # frozen constants for preset mode, not parameter slots
        self.fixed_patterns: Optional[np.ndarray] = None
        self.fixed_signs: Optional[np.ndarray] = None
        # verbatim role/pattern assignments for raw mode, not trained
        self.raw_u: dict[int, np.ndarray] = {}
        self.raw_p: dict[int, np.ndarray] = {}

    @classmethod
    def init(cls, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0) -> "ModelParams":
        """Fresh parameters: Gaussian(0, 0.1) blocks, zero mixing weights.

        Zero mixing weights start every role at the uniform mixture over the
        basis, so no basis vector is preferred before training.
        """
        rel_arity = [a for _, a in vocab.relations]
        params = cls(
            cfg,
            vocab.n_entities,
            rel_arity,
            rel_roles=dict(vocab.rel_roles),
            n_roles=vocab.n_roles,
        )
        rng = make_rng(seed, _STREAM_INIT)
        d, m, k = cfg.embed_dim, cfg.multiplicity, cfg.latent_size
        mg, npm = cfg.role_multiplicity, cfg.patterns_per_role

        def gauss(*shape):
            return rng.normal(0.0, INIT_STD, size=shape)

        params.data[("ent",)] = gauss(vocab.n_entities, m, d)
        if cfg.mode in ("latent", "extended"):
            params.data[("basis_u",)] = gauss(k, d)
            for a in params.arities:
                params.data[("basis_p", a)] = gauss(k, a, m)
            for rel, a in enumerate(rel_arity):
                params.data[("alpha", rel)] = np.zeros((a, mg, k))
                if cfg.mode == "extended":
                    params.data[("beta", rel)] = np.zeros((a, mg, npm, k))
                    params.data[("omega", rel)] = np.ones((a, mg, npm))
        elif cfg.mode == "explicit":
            if vocab.n_roles == 0:
                raise ConfigError("explicit mode needs a role-annotated dataset")
            params.data[("role_vec",)] = gauss(vocab.n_roles, d)
            for a in params.arities:
                params.data[("role_pat", a)] = gauss(vocab.n_roles, a, m)
            for rel in range(len(rel_arity)):
                if rel not in params.rel_roles:
                    raise ConfigError(f"relation {rel} lacks role annotations")
        elif cfg.mode == "preset":
            if any(a != 2 for a in rel_arity):
                raise ConfigError("preset modes support binary relations only")
            params.fixed_patterns, params.fixed_signs = preset_patterns(cfg.preset)
            for rel in range(len(rel_arity)):
                params.data[("preset_u", rel)] = gauss(2, mg, d)
        elif cfg.mode == "raw":
            raise ConfigError("raw-mode parameters are constructed, not initialized")
        return params

    @property
    def n_relations(self) -> int:
        return len(self.rel_arity)

    def slots(self) -> list[SlotKey]:
        """Keys of every learnable slot, in a stable order."""
        return sorted(self.data.keys(), key=repr)

    def get(self, key: SlotKey) -> np.ndarray:
        return self.data[key]

    def copy(self) -> "ModelParams":
        dup = ModelParams(
            self.cfg, self.n_entities, self.rel_arity, self.rel_roles, self.n_roles
        )
        dup.data = {k: v.copy() for k, v in self.data.items()}
        dup.fixed_patterns = self.fixed_patterns
        dup.fixed_signs = self.fixed_signs
        dup.raw_u = {k: v.copy() for k, v in self.raw_u.items()}
        dup.raw_p = {k: v.copy() for k, v in self.raw_p.items()}
        return dup

    def arity_of(self, rel: int) -> int:
        return self.rel_arity[rel]


@dataclass
class RelationTerms:
    """Derived per-relation quantities consumed by the scorer.

    `role_emb` is (a, mg, d), `patterns` is (a, mg, npm, a, m) and `weights`
    is (a, mg, npm). The softmax outputs that produced them are kept for the
    backward pass.
    """

    role_emb: np.ndarray
    patterns: np.ndarray
    weights: np.ndarray
    mix_alpha: Optional[np.ndarray] = None  # softmax(alpha): (a, mg, K)
    mix_beta: Optional[np.ndarray] = None  # softmax(beta): (a, mg, npm, K)
    norm_basis: Optional[np.ndarray] = None  # softmaxed basis matrices: (K, a, m)
    role_ids: Optional[tuple[int, ...]] = None  # explicit mode

    @property
    def n_terms(self) -> int:
        a, mg, npm = self.weights.shape
        return a * mg * npm

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Term-major views: (T, d), (T, a, m), (T,) with T = a * mg * npm."""
        a, mg, npm = self.weights.shape
        d = self.role_emb.shape[-1]
        m = self.patterns.shape[-1]
        u = np.broadcast_to(self.role_emb[:, :, None, :], (a, mg, npm, d))
        return (
            u.reshape(-1, d),
            self.patterns.reshape(-1, a, m),
            self.weights.reshape(-1),
        )


def normalized_basis(params: ModelParams, arity: int) -> np.ndarray:
    """Jointly softmaxed basis matrices for one arity, shape (K, arity, m)."""
    raw = params.data.get(("basis_p", arity))
    if raw is None:
        raise ConfigError(f"no basis matrices registered for arity {arity}")
    out = np.empty_like(raw)
    for k in range(raw.shape[0]):
        out[k] = softmax_matrix(raw[k])
    return out


def relation_terms(
    params: ModelParams,
    rel: int,
    basis_cache: Optional[dict[int, np.ndarray]] = None,
) -> RelationTerms:
    """Role embeddings, pattern matrices and term weights for one relation."""
    cfg = params.cfg
    a = params.arity_of(rel)
    mg, npm = cfg.role_multiplicity, cfg.patterns_per_role

    if cfg.mode in ("latent", "extended"):
        if basis_cache is not None and a in basis_cache:
            q = basis_cache[a]
        else:
            q = normalized_basis(params, a)
            if basis_cache is not None:
                basis_cache[a] = q
        alpha = params.data[("alpha", rel)]  # (a, mg, K)
        mix_a = softmax_last_axis(alpha)
        role_emb = np.einsum("ijk,kd->ijd", mix_a, params.data[("basis_u",)])
        if cfg.mode == "latent":
            patterns = np.einsum("ijk,kxm->ijxm", mix_a, q)[:, :, None, :, :]
            return RelationTerms(
                role_emb,
                patterns,
                np.ones((a, mg, npm)),
                mix_alpha=mix_a,
                norm_basis=q,
            )
        beta = params.data[("beta", rel)]  # (a, mg, npm, K)
        mix_b = softmax_last_axis(beta)
        patterns = np.einsum("ijlk,kxm->ijlxm", mix_b, q)
        return RelationTerms(
            role_emb,
            patterns,
            params.data[("omega", rel)],
            mix_alpha=mix_a,
            mix_beta=mix_b,
            norm_basis=q,
        )

    if cfg.mode == "explicit":
        roles = params.rel_roles.get(rel)
        if roles is None:
            raise ConfigError(f"relation {rel} has no role annotations")
        role_emb = params.data[("role_vec",)][list(roles)][:, None, :]
        raw_pat = params.data[("role_pat", a)][list(roles)]
        patterns = np.empty((a, 1, 1, a, cfg.multiplicity))
        for i in range(a):
            patterns[i, 0, 0] = softmax_matrix(raw_pat[i])
        return RelationTerms(role_emb, patterns, np.ones((a, 1, 1)), role_ids=roles)

    if cfg.mode == "preset":
        role_emb = params.data[("preset_u", rel)]
        patterns = np.broadcast_to(
            params.fixed_patterns, (2, mg, npm, 2, cfg.multiplicity)
        )
        return RelationTerms(role_emb, patterns, params.fixed_signs)

    if cfg.mode == "raw":
        return RelationTerms(
            params.raw_u[rel][:, None, :],
            params.raw_p[rel][:, None, None, :, :],
            np.ones((a, 1, 1)),
        )

    raise ConfigError(f"unknown mode {cfg.mode!r}")


def role_embedding(params: ModelParams, rel: int, position: int) -> np.ndarray:
    """Embedding of one role slot; convex basis mixture in latent mode."""
    terms = relation_terms(params, rel)
    if not 0 <= position < params.arity_of(rel):
        raise DimensionError(
            f"position {position} out of range for arity {params.arity_of(rel)}"
        )
    emb = terms.role_emb[position]
    return emb[0] if emb.shape[0] == 1 else emb


def pattern_matrix(params: ModelParams, rel: int, position: int) -> np.ndarray:
    """Pattern matrix of one role slot, shape (arity, multiplicity)."""
    terms = relation_terms(params, rel)
    if not 0 <= position < params.arity_of(rel):
        raise DimensionError(
            f"position {position} out of range for arity {params.arity_of(rel)}"
        )
    pat = terms.patterns[position]
    if pat.shape[0] == 1 and pat.shape[1] == 1:
        return pat[0, 0]
    return pat


@dataclass
class ScoreContext:
    """Cached intermediates for scoring one fact.

    `weighted` holds the pattern-weighted entity vectors, one per (term,
    position); the optional `masks` array (same shape) carries inverted
    dropout factors applied before the multilinear product.
    """

    rel: int
    entities: tuple[int, ...]
    role_emb: np.ndarray  # (T, d)
    patterns: np.ndarray  # (T, a, m)
    weights: np.ndarray  # (T,)
    ent_blocks: np.ndarray  # (a, m, d)
    weighted: np.ndarray  # (T, a, d)
    masks: Optional[np.ndarray] = None  # (T, a, d)

    def masked_weighted(self) -> np.ndarray:
        if self.masks is None:
            return self.weighted
        return self.weighted * self.masks


def score_context(params: ModelParams, fact: Fact) -> ScoreContext:
    """Assemble every intermediate needed to score `fact`."""
    a = params.arity_of(fact.relation)
    if fact.arity != a:
        raise DimensionError(
            f"fact arity {fact.arity} != relation arity {a}"
        )
    u, p, w = relation_terms(params, fact.relation).flat()
    ent_blocks = params.data[("ent",)][list(fact.entities)]
    weighted = np.einsum("tlm,lmd->tld", p, ent_blocks)
    return ScoreContext(fact.relation, fact.entities, u, p, w, ent_blocks, weighted)


def score_from_context(ctx: ScoreContext) -> float:
    """Multilinear score of the fact the context was built from."""
    prod = ctx.role_emb.copy()
    v = ctx.masked_weighted()
    for pos in range(v.shape[1]):
        prod *= v[:, pos, :]
    return float(ctx.weights @ prod.sum(axis=1))


def score(params: ModelParams, fact: Fact) -> float:
    """Plausibility score of one fact under the current parameters."""
    return score_from_context(score_context(params, fact))


def score_batch_position(
    params: ModelParams, fact: Fact, position: int, ctx: Optional[ScoreContext] = None
) -> np.ndarray:
    """Scores of the fact with the entity at `position` replaced by each entity.

    Precomputes the product of every factor except the replaced position's
    contribution, then contracts once against the full entity table; the
    entry at the fact's own entity equals ``score(params, fact)``.
    """
    if ctx is None:
        ctx = score_context(params, fact)
    a = len(ctx.entities)
    if not 0 <= position < a:
        raise DimensionError(f"position {position} out of range for arity {a}")
    v = ctx.masked_weighted()
    hole = ctx.role_emb.copy()
    for pos in range(a):
        if pos != position:
            hole *= v[:, pos, :]
    if ctx.masks is not None:
        hole = hole * ctx.masks[:, position, :]
    # gather[mu, t] = sum over terms of weight * pattern row entry * hole
    gather = np.einsum("t,tm,td->md", ctx.weights, ctx.patterns[:, position, :], hole)
    return np.einsum("cmd,md->c", params.data[("ent",)], gather)
