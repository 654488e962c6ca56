"""Deliberately naive reimplementations used only as test oracles.

Everything here is written with plain Python loops and direct formula
transcription, independent of the vectorized production paths.
"""

import math

import numpy as np


def naive_softmax(values):
    exps = [math.exp(v) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def naive_softmax_matrix(matrix):
    flat = [v for row in matrix for v in row]
    soft = naive_softmax(flat)
    cols = len(matrix[0])
    return [soft[i * cols : (i + 1) * cols] for i in range(len(matrix))]


def naive_multilinear(vectors):
    total = 0.0
    for t in range(len(vectors[0])):
        prod = 1.0
        for v in vectors:
            prod *= v[t]
        total += prod
    return total


def naive_role_embedding(alpha, basis_vectors):
    weights = naive_softmax(list(alpha))
    d = len(basis_vectors[0])
    out = [0.0] * d
    for k, w in enumerate(weights):
        for t in range(d):
            out[t] += w * basis_vectors[k][t]
    return out


def naive_pattern_matrix(alpha, basis_matrices):
    weights = naive_softmax(list(alpha))
    rows = len(basis_matrices[0])
    cols = len(basis_matrices[0][0])
    out = [[0.0] * cols for _ in range(rows)]
    for k, w in enumerate(weights):
        normed = naive_softmax_matrix(basis_matrices[k])
        for i in range(rows):
            for j in range(cols):
                out[i][j] += w * normed[i][j]
    return out


def naive_latent_score(params, fact):
    """Latent-mode score via loops over the raw parameter arrays."""
    arity = params.arity_of(fact.relation)
    basis_u = params.data[("basis_u",)]
    basis_p = params.data[("basis_p", arity)]
    alpha = params.data[("alpha", fact.relation)]
    ent = params.data[("ent",)]
    total = 0.0
    for i in range(arity):
        u = naive_role_embedding(alpha[i, 0], [list(b) for b in basis_u])
        pat = naive_pattern_matrix(
            alpha[i, 0], [[list(r) for r in b] for b in basis_p]
        )
        vectors = [u]
        for j in range(arity):
            block = ent[fact.entities[j]]
            weighted = [
                sum(pat[j][mu] * block[mu][t] for mu in range(block.shape[0]))
                for t in range(block.shape[1])
            ]
            vectors.append(weighted)
        total += naive_multilinear(vectors)
    return total


def naive_extended_score(params, fact):
    arity = params.arity_of(fact.relation)
    cfg = params.cfg
    basis_u = params.data[("basis_u",)]
    basis_p = params.data[("basis_p", arity)]
    alpha = params.data[("alpha", fact.relation)]
    beta = params.data[("beta", fact.relation)]
    omega = params.data[("omega", fact.relation)]
    ent = params.data[("ent",)]
    total = 0.0
    for i in range(arity):
        for j in range(cfg.role_multiplicity):
            u = naive_role_embedding(alpha[i, j], [list(b) for b in basis_u])
            for k in range(cfg.patterns_per_role):
                pat = naive_pattern_matrix(
                    beta[i, j, k], [[list(r) for r in b] for b in basis_p]
                )
                vectors = [u]
                for l in range(arity):
                    block = ent[fact.entities[l]]
                    vectors.append(
                        [
                            sum(
                                pat[l][mu] * block[mu][t]
                                for mu in range(block.shape[0])
                            )
                            for t in range(block.shape[1])
                        ]
                    )
                total += omega[i, j, k] * naive_multilinear(vectors)
    return total


def naive_explicit_score(params, fact):
    arity = params.arity_of(fact.relation)
    roles = params.rel_roles[fact.relation]
    role_vec = params.data[("role_vec",)]
    role_pat = params.data[("role_pat", arity)]
    ent = params.data[("ent",)]
    total = 0.0
    for i in range(arity):
        u = list(role_vec[roles[i]])
        pat = naive_softmax_matrix([list(r) for r in role_pat[roles[i]]])
        vectors = [u]
        for j in range(arity):
            block = ent[fact.entities[j]]
            vectors.append(
                [
                    sum(pat[j][mu] * block[mu][t] for mu in range(block.shape[0]))
                    for t in range(block.shape[1])
                ]
            )
        total += naive_multilinear(vectors)
    return total


def naive_fact_loss(score_fn, params, fact, n_entities):
    """Cross-entropy against all corruptions, composed without log-sum-exp."""
    total = 0.0
    for pos in range(len(fact.entities)):
        true_score = score_fn(params, fact)
        denom = 0.0
        for e in range(n_entities):
            entities = list(fact.entities)
            entities[pos] = e
            candidate = type(fact)(fact.relation, tuple(entities), fact.roles)
            denom += math.exp(score_fn(params, candidate))
        total += -math.log(math.exp(true_score) / denom)
    return total


def brute_force_candidates(kb, fact, position):
    """Filtered-candidate mask recomputed by scanning every stored fact."""
    mask = np.ones(kb.vocab.n_entities, dtype=bool)
    for other in kb.all_facts():
        if other.relation != fact.relation:
            continue
        rest_match = all(
            other.entities[j] == fact.entities[j]
            for j in range(len(fact.entities))
            if j != position
        )
        if rest_match:
            mask[other.entities[position]] = False
    mask[fact.entities[position]] = True
    return mask


def sort_rank(scores, mask, true_entity):
    """Sort-based optimistic rank among the masked candidates."""
    candidate_scores = sorted(
        (scores[e] for e in range(len(scores)) if mask[e]), reverse=True
    )
    true_score = scores[true_entity]
    for idx, value in enumerate(candidate_scores):
        if value == true_score:
            return idx + 1
    raise AssertionError("true entity's score not found among candidates")
