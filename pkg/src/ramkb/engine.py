"""Vectorized scoring and manual reverse-mode gradients.

Facts are processed in groups of equal arity. Within a group every score is
a sum of multilinear terms; the factor list of a term is the role embedding
followed by one pattern-weighted entity vector per position. Prefix/suffix
products over that factor list give both the full product and every
leave-one-out product without dividing (dropout can zero entries), which the
backward pass reuses.

Candidate scoring replaces one position: the product of all other factors is
contracted once against the entity table (or a gathered candidate table).
The gradient of a position's loss with respect to everything shared across
candidates equals the gradient of a single pseudo-score in which the
replaced position's entity block is the candidate-probability-weighted sum
of entity blocks; the backward pass exploits that to stay vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .kb import Fact
from .mathcore import softmax_matrix_vjp, softmax_vjp
from .model import ModelParams, RelationTerms, SlotKey, relation_terms


class GradientBuffer:
    """Sparse per-slot gradient accumulator for one mini-batch.

    Row-sparse slots (entity table, explicit role tables) store a dense
    gradient array plus a mask of touched rows so the optimizer can update
    only those rows.
    """

    def __init__(self, params: ModelParams) -> None:
        self._shapes = {key: params.data[key].shape for key in params.data}
        self.grads: dict[SlotKey, np.ndarray] = {}
        self.touched: dict[SlotKey, np.ndarray] = {}

    def _ensure(self, key: SlotKey) -> np.ndarray:
        if key not in self.grads:
            self.grads[key] = np.zeros(self._shapes[key])
            if key[0] in ModelParams.ROW_SPARSE:
                self.touched[key] = np.zeros(self._shapes[key][0], dtype=bool)
        return self.grads[key]

    def add(self, key: SlotKey, value: np.ndarray) -> None:
        self._ensure(key)
        self.grads[key] += value

    def add_rows(self, key: SlotKey, rows: np.ndarray, values: np.ndarray) -> None:
        buf = self._ensure(key)
        np.add.at(buf, rows, values)
        self.touched[key][rows] = True

    def add_all_rows(self, key: SlotKey, values: np.ndarray) -> None:
        buf = self._ensure(key)
        buf += values
        self.touched[key][:] = True

    def merge(self, other: "GradientBuffer") -> None:
        for key, grad in other.grads.items():
            self._ensure(key)
            self.grads[key] += grad
            if key in other.touched:
                self.touched[key] |= other.touched[key]

    def max_abs(self) -> float:
        return max((float(np.abs(g).max()) for g in self.grads.values()), default=0.0)


@dataclass
class GroupSpec:
    """Facts of one arity stacked into index arrays."""

    arity: int
    rels: np.ndarray  # (B,)
    ents: np.ndarray  # (B, a)
    fact_index: np.ndarray  # positions in the original batch list


def split_groups(params: ModelParams, facts: list[Fact]) -> list[GroupSpec]:
    by_arity: dict[int, list[int]] = {}
    for i, fact in enumerate(facts):
        if fact.arity != params.arity_of(fact.relation):
            raise ConfigError(
                f"fact arity {fact.arity} != relation arity {params.arity_of(fact.relation)}"
            )
        by_arity.setdefault(fact.arity, []).append(i)
    groups = []
    for arity in sorted(by_arity):
        idx = by_arity[arity]
        groups.append(
            GroupSpec(
                arity,
                rels=np.array([facts[i].relation for i in idx], dtype=np.intp),
                ents=np.array([facts[i].entities for i in idx], dtype=np.intp),
                fact_index=np.array(idx, dtype=np.intp),
            )
        )
    return groups


@dataclass
class GroupForward:
    """Everything the backward pass needs about one scored group."""

    spec: GroupSpec
    uniq_rels: np.ndarray
    rel_inverse: np.ndarray
    terms: list[RelationTerms]
    uf: np.ndarray  # (B, T, d) role embeddings per term
    pf: np.ndarray  # (B, T, a, m) pattern matrices per term
    wf: np.ndarray  # (B, T) term weights
    ent_blocks: np.ndarray  # (B, a, m, d)
    masks: Optional[np.ndarray]  # (B, T, a, d) inverted-dropout factors
    factors: np.ndarray  # (B, T, a+1, d)
    prefix: np.ndarray  # (B, T, a+2, d)
    suffix: np.ndarray  # (B, T, a+2, d)
    phi: np.ndarray  # (B,)
    gather: np.ndarray  # (B, a, m, d) contraction kernel per position
    candidates: Optional[np.ndarray]  # (B, a, C) entity ids, col 0 = true
    cand_blocks: Optional[np.ndarray]  # (B, a, C, m, d)
    scores: np.ndarray  # (B, a, C) or (B, a, n_entities)


def forward_group(
    params: ModelParams,
    spec: GroupSpec,
    candidates: Optional[np.ndarray] = None,
    masks: Optional[np.ndarray] = None,
    basis_cache: Optional[dict] = None,
) -> GroupForward:
    a = spec.arity
    b = len(spec.rels)
    ent_table = params.data[("ent",)]
    n_e, m, d = ent_table.shape

    uniq, inverse = np.unique(spec.rels, return_inverse=True)
    if basis_cache is None:
        basis_cache = {}
    terms = [relation_terms(params, int(rel), basis_cache) for rel in uniq]
    flat = [t.flat() for t in terms]
    uf = np.stack([f[0] for f in flat])[inverse]  # (B, T, d)
    pf = np.stack([f[1] for f in flat])[inverse]  # (B, T, a, m)
    wf = np.stack([f[2] for f in flat])[inverse]  # (B, T)
    n_terms = uf.shape[1]

    ent_blocks = ent_table[spec.ents]  # (B, a, m, d)
    weighted = np.einsum("btlm,blmd->btld", pf, ent_blocks, optimize=True)
    if masks is not None:
        weighted = weighted * masks

    factors = np.empty((b, n_terms, a + 1, d))
    factors[:, :, 0, :] = uf
    factors[:, :, 1:, :] = weighted

    prefix = np.empty((b, n_terms, a + 2, d))
    suffix = np.empty((b, n_terms, a + 2, d))
    prefix[:, :, 0, :] = 1.0
    suffix[:, :, a + 1, :] = 1.0
    for q in range(a + 1):
        prefix[:, :, q + 1, :] = prefix[:, :, q, :] * factors[:, :, q, :]
    for q in range(a, -1, -1):
        suffix[:, :, q, :] = factors[:, :, q, :] * suffix[:, :, q + 1, :]

    phi = np.einsum("bt,btd->b", wf, prefix[:, :, a + 1, :], optimize=True)

    # leave-one-out products around each position, with the candidate-side
    # dropout factor folded in so substituted entities see the same mask
    loo = prefix[:, :, 1 : a + 1, :] * suffix[:, :, 2 : a + 2, :]
    if masks is not None:
        loo = loo * masks
    weighted_loo = wf[:, :, None, None] * loo
    gather = np.einsum("btlm,btld->blmd", pf, weighted_loo, optimize=True)

    if candidates is None:
        flat_gather = gather.reshape(b * a, m * d)
        scores = (flat_gather @ ent_table.reshape(n_e, m * d).T).reshape(b, a, n_e)
        cand_blocks = None
    else:
        cand_blocks = ent_table[candidates]  # (B, a, C, m, d)
        scores = np.einsum("blcmd,blmd->blc", cand_blocks, gather, optimize=True)

    return GroupForward(
        spec=spec,
        uniq_rels=uniq,
        rel_inverse=inverse,
        terms=terms,
        uf=uf,
        pf=pf,
        wf=wf,
        ent_blocks=ent_blocks,
        masks=masks,
        factors=factors,
        prefix=prefix,
        suffix=suffix,
        phi=phi,
        gather=gather,
        candidates=candidates,
        cand_blocks=cand_blocks,
        scores=scores,
    )


def position_loss(scores: np.ndarray, true_col: int) -> float:
    """Cross-entropy of the true column against all candidate scores."""
    top = scores.max()
    lse = top + np.log(np.exp(scores - top).sum())
    return float(lse - scores[true_col])


def group_losses(fwd: GroupForward) -> np.ndarray:
    """Per-fact loss: sum over positions of the candidate cross-entropy."""
    scores = fwd.scores
    top = scores.max(axis=-1)
    lse = top + np.log(np.exp(scores - top[..., None]).sum(axis=-1))
    if fwd.candidates is None:
        b, a = fwd.spec.ents.shape
        true_scores = np.take_along_axis(
            scores, fwd.spec.ents[:, :, None], axis=-1
        )[:, :, 0]
    else:
        true_scores = scores[:, :, 0]
    return (lse - true_scores).sum(axis=1)


def _candidate_softmax_grad(fwd: GroupForward) -> np.ndarray:
    scores = fwd.scores
    top = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - top)
    p = e / e.sum(axis=-1, keepdims=True)
    if fwd.candidates is None:
        np.subtract.at(p, (np.arange(p.shape[0])[:, None],
                           np.arange(p.shape[1])[None, :],
                           fwd.spec.ents), 1.0)
    else:
        p[:, :, 0] -= 1.0
    return p


def backward_group(
    params: ModelParams, fwd: GroupForward, buf: GradientBuffer, scale: float
) -> None:
    """Accumulate `scale` times the gradient of the group's summed loss."""
    cfg = params.cfg
    if cfg.mode == "raw":
        raise ConfigError("raw mode is a fixed construction and cannot be trained")
    spec = fwd.spec
    a = spec.arity
    b, n_terms, _, d = fwd.factors.shape
    ent_table = params.data[("ent",)]
    n_e, m, _ = ent_table.shape

    g = _candidate_softmax_grad(fwd) * scale  # (B, a, C)

    # candidate-side entity gradients and probability-weighted pseudo blocks
    if fwd.candidates is None:
        g_flat = g.reshape(b * a, n_e)
        gather_flat = fwd.gather.reshape(b * a, m * d)
        buf.add_all_rows(("ent",), (g_flat.T @ gather_flat).reshape(n_e, m, d))
        pseudo = (g_flat @ ent_table.reshape(n_e, m * d)).reshape(b, a, m, d)
    else:
        contrib = g[:, :, :, None, None] * fwd.gather[:, :, None, :, :]
        buf.add_rows(("ent",), fwd.candidates.reshape(-1),
                     contrib.reshape(-1, m, d))
        pseudo = np.einsum("blc,blcmd->blmd", g, fwd.cand_blocks, optimize=True)

    grad_u = np.zeros((b, n_terms, d))
    grad_p = np.zeros((b, n_terms, a, m))
    grad_w = np.zeros((b, n_terms))
    grad_e = np.zeros((b, a, m, d))

    factors = fwd.factors
    for pos in range(a):
        pseudo_v = np.einsum("btm,bmd->btd", fwd.pf[:, :, pos, :], pseudo[:, pos],
                             optimize=True)
        if fwd.masks is not None:
            pseudo_v = pseudo_v * fwd.masks[:, :, pos, :]
        swapped = factors.copy()
        swapped[:, :, 1 + pos, :] = pseudo_v

        pre = np.empty((b, n_terms, a + 2, d))
        suf = np.empty((b, n_terms, a + 2, d))
        pre[:, :, 0, :] = 1.0
        suf[:, :, a + 1, :] = 1.0
        for q in range(a + 1):
            pre[:, :, q + 1, :] = pre[:, :, q, :] * swapped[:, :, q, :]
        for q in range(a, -1, -1):
            suf[:, :, q, :] = swapped[:, :, q, :] * suf[:, :, q + 1, :]

        grad_w += pre[:, :, a + 1, :].sum(axis=-1)
        w_col = fwd.wf[:, :, None]
        grad_u += w_col * (pre[:, :, 0, :] * suf[:, :, 1, :])
        for l in range(a):
            grad_vtil = w_col * (pre[:, :, 1 + l, :] * suf[:, :, l + 2, :])
            if fwd.masks is not None:
                grad_vtil = grad_vtil * fwd.masks[:, :, l, :]
            source = pseudo[:, pos] if l == pos else fwd.ent_blocks[:, l]
            grad_p[:, :, l, :] += np.einsum("bmd,btd->btm", source, grad_vtil,
                                            optimize=True)
            if l != pos:
                grad_e[:, l] += np.einsum("btm,btd->bmd", fwd.pf[:, :, l, :],
                                          grad_vtil, optimize=True)

    buf.add_rows(("ent",), spec.ents.reshape(-1), grad_e.reshape(-1, m, d))

    # fold term-major gradients back to (arity, role_multiplicity, patterns) axes
    mg, npm = cfg.role_multiplicity, cfg.patterns_per_role
    grad_u = grad_u.reshape(b, a, mg, npm, d).sum(axis=3)
    grad_p = grad_p.reshape(b, a, mg, npm, a, m)
    grad_w = grad_w.reshape(b, a, mg, npm)

    n_rel = len(fwd.uniq_rels)
    gu_rel = np.zeros((n_rel,) + grad_u.shape[1:])
    gp_rel = np.zeros((n_rel,) + grad_p.shape[1:])
    gw_rel = np.zeros((n_rel,) + grad_w.shape[1:])
    np.add.at(gu_rel, fwd.rel_inverse, grad_u)
    np.add.at(gp_rel, fwd.rel_inverse, grad_p)
    np.add.at(gw_rel, fwd.rel_inverse, grad_w)

    grad_norm_basis: Optional[np.ndarray] = None
    for r, rel in enumerate(fwd.uniq_rels):
        rel = int(rel)
        terms = fwd.terms[r]
        if cfg.mode in ("latent", "extended"):
            basis_u = params.data[("basis_u",)]
            buf.add(("basis_u",), np.einsum("ijk,ijd->kd", terms.mix_alpha,
                                            gu_rel[r], optimize=True))
            grad_mix_a = np.einsum("kd,ijd->ijk", basis_u, gu_rel[r], optimize=True)
            if grad_norm_basis is None:
                grad_norm_basis = np.zeros_like(terms.norm_basis)
            if cfg.mode == "latent":
                gp = gp_rel[r][:, :, 0]  # (a, mg, a, m)
                grad_norm_basis += np.einsum("ijk,ijxm->kxm", terms.mix_alpha, gp,
                                             optimize=True)
                grad_mix_a += np.einsum("kxm,ijxm->ijk", terms.norm_basis, gp,
                                        optimize=True)
            else:
                grad_norm_basis += np.einsum("ijlk,ijlxm->kxm", terms.mix_beta,
                                             gp_rel[r], optimize=True)
                grad_mix_b = np.einsum("kxm,ijlxm->ijlk", terms.norm_basis,
                                       gp_rel[r], optimize=True)
                buf.add(("beta", rel), softmax_vjp(terms.mix_beta, grad_mix_b))
                buf.add(("omega", rel), gw_rel[r])
            buf.add(("alpha", rel), softmax_vjp(terms.mix_alpha, grad_mix_a))
        elif cfg.mode == "explicit":
            roles = np.array(terms.role_ids, dtype=np.intp)
            buf.add_rows(("role_vec",), roles, gu_rel[r][:, 0, :])
            raw_grads = np.empty((a, a, m))
            for i in range(a):
                raw_grads[i] = softmax_matrix_vjp(
                    terms.patterns[i, 0, 0], gp_rel[r][i, 0, 0]
                )
            buf.add_rows(("role_pat", a), roles, raw_grads)
        elif cfg.mode == "preset":
            buf.add(("preset_u", rel), gu_rel[r])

    if grad_norm_basis is not None:
        raw = np.empty_like(grad_norm_basis)
        norm = fwd.terms[0].norm_basis
        for k in range(raw.shape[0]):
            raw[k] = softmax_matrix_vjp(norm[k], grad_norm_basis[k])
        buf.add(("basis_p", a), raw)
