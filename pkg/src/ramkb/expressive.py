"""Constructive exact separation of a ground truth by a raw-mode model.

Given any finite set of true facts, parameters of a raw-mode model (no
softmax normalization anywhere) can be written down so that every true fact
scores exactly its arity and every other tuple scores exactly zero:

* embedding dimensionality and latent size equal the number of facts;
* the block of entity e has a 1 at (row i, column j) iff e fills role
  position i of the j-th fact;
* every pattern matrix is the arity-sized identity padded with zeros, so row
  i of the matrix selects row i of an entity block;
* the role vector of relation r has a 1 in column j iff fact j uses r.

Each multilinear term then counts the facts matching the query exactly, and
all arithmetic stays on small integers represented exactly in floats.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError
from .kb import Fact, Vocabulary
from .model import ModelConfig, ModelParams, score

ENUMERATION_CAP = 1_000_000


@dataclass(frozen=True)
class GroundTruth:
    """The complete set of true facts over a small vocabulary."""

    facts: tuple[Fact, ...]
    vocab: Vocabulary

    def __post_init__(self) -> None:
        if len(self.facts) < 1:
            raise DataError("ground truth needs at least one fact")
        if len(set(self.facts)) != len(self.facts):
            raise DataError("ground truth contains duplicate facts")
        for fact in self.facts:
            if fact.arity != self.vocab.arity(fact.relation):
                raise DataError("fact arity does not match its relation")


def ground_truth_from_json(text: str) -> GroundTruth:
    """Load a ground truth from a JSON document.

    Expected shape: {"facts": [{"relation": str, "entities": [str, ...]},
    ...], "entities": [str, ...]?} where the optional entity list adds
    vocabulary entries beyond those appearing in facts.
    """
    data = json.loads(text)
    raw_facts = data.get("facts")
    if not raw_facts:
        raise DataError("ground truth JSON needs a non-empty 'facts' list")
    vocab = Vocabulary()
    for name in data.get("entities", []):
        vocab.add_entity(name)
    facts = []
    for obj in raw_facts:
        entities = tuple(obj["entities"])
        if len(entities) < 2:
            raise DataError("facts need >= 2 entities")
        rel = vocab.add_relation(obj["relation"], len(entities))
        facts.append(Fact(rel, tuple(vocab.add_entity(e) for e in entities)))
    return GroundTruth(tuple(facts), vocab)


def construct(gt: GroundTruth) -> ModelParams:
    """Raw-mode parameters that exactly separate the ground truth."""
    n_facts = len(gt.facts)
    max_arity = gt.vocab.max_arity
    cfg = ModelConfig(
        embed_dim=n_facts,
        multiplicity=max_arity,
        latent_size=n_facts,
        mode="raw",
    )
    rel_arity = [a for _, a in gt.vocab.relations]
    params = ModelParams(cfg, gt.vocab.n_entities, rel_arity)
    ent = np.zeros((gt.vocab.n_entities, max_arity, n_facts))
    for j, fact in enumerate(gt.facts):
        for i, entity in enumerate(fact.entities):
            ent[entity, i, j] = 1.0
    params.data[("ent",)] = ent

    rel_columns: dict[int, list[int]] = {}
    for j, fact in enumerate(gt.facts):
        rel_columns.setdefault(fact.relation, []).append(j)
    for rel, arity in enumerate(rel_arity):
        u = np.zeros((arity, n_facts))
        for j in rel_columns.get(rel, []):
            u[:, j] = 1.0
        params.raw_u[rel] = u
        pattern = np.zeros((arity, arity, max_arity))
        for i in range(arity):
            pattern[i, np.arange(arity), np.arange(arity)] = 1.0
        params.raw_p[rel] = pattern
    return params


@dataclass
class SeparationReport:
    passed: bool
    min_true_score: float
    max_false_score: float
    n_true: int
    n_enumerated: int

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_true_score": self.min_true_score,
            "max_false_score": self.max_false_score,
            "n_true": self.n_true,
            "n_enumerated": self.n_enumerated,
        }


def enumerate_tuples(vocab: Vocabulary) -> Iterable[Fact]:
    """Every (relation, entity tuple) combination over the vocabulary."""
    for rel, (_, arity) in enumerate(vocab.relations):
        for combo in itertools.product(range(vocab.n_entities), repeat=arity):
            yield Fact(rel, combo)


def verify_separation(gt: GroundTruth, params: ModelParams) -> SeparationReport:
    """Exhaustively check that true facts score positive and others zero.

    Passes iff the smallest true-fact score is positive and the largest
    score over all non-true tuples is exactly zero.
    """
    total = sum(
        gt.vocab.n_entities ** arity for _, arity in gt.vocab.relations
    )
    if total > ENUMERATION_CAP:
        raise ConfigError(
            f"{total} candidate tuples exceed the enumeration cap "
            f"{ENUMERATION_CAP}; use a smaller ground truth"
        )
    true_set = set(gt.facts)
    min_true = float("inf")
    max_false = float("-inf")
    n_enumerated = 0
    for fact in enumerate_tuples(gt.vocab):
        value = score(params, fact)
        n_enumerated += 1
        if fact in true_set:
            min_true = min(min_true, value)
        else:
            max_false = max(max_false, value)
    if max_false == float("-inf"):
        max_false = 0.0
    passed = min_true > 0 and max_false == 0.0
    return SeparationReport(passed, min_true, max_false, len(true_set), n_enumerated)
