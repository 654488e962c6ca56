"""Datasets of n-ary relational facts.

Parses the two distribution formats (tabular and role-annotated JSON lines),
builds dense vocabularies over the union of splits, and owns the known-true
index used by filtered ranking.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DataError, ParseError
from .mathcore import make_rng

log = logging.getLogger("ramkb.kb")

# (relation name, entity names, role names or None)
RawFact = tuple[str, tuple[str, ...], tuple[str, ...] | None]


@dataclass(frozen=True)
class Fact:
    """One n-ary fact: a relation plus its ordered entity slots.

    `roles` carries global role indices for role-annotated datasets and is
    None otherwise. When present it has the same length as `entities`.
    """

    relation: int
    entities: tuple[int, ...]
    roles: tuple[int, ...] | None = None

    @property
    def arity(self) -> int:
        return len(self.entities)


class Vocabulary:
    """Dense entity/relation/role index maps.

    Relations are keyed by (name, arity): the same surface name used at two
    arities is two independent relations, because pattern parameters are
    arity-shaped and cannot be shared.
    """

    def __init__(self) -> None:
        self.entities: list[str] = []
        self.entity_index: dict[str, int] = {}
        self.relations: list[tuple[str, int]] = []
        self.relation_index: dict[tuple[str, int], int] = {}
        self.roles: list[str] = []
        self.role_index: dict[str, int] = {}
        # per-relation tuple of global role ids (role-annotated data only)
        self.rel_roles: dict[int, tuple[int, ...]] = {}

    def add_entity(self, name: str) -> int:
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entities)
            self.entities.append(name)
            self.entity_index[name] = idx
        return idx

    def add_relation(self, name: str, arity: int) -> int:
        key = (name, arity)
        idx = self.relation_index.get(key)
        if idx is None:
            idx = len(self.relations)
            self.relations.append(key)
            self.relation_index[key] = idx
        return idx

    def add_role(self, name: str) -> int:
        idx = self.role_index.get(name)
        if idx is None:
            idx = len(self.roles)
            self.roles.append(name)
            self.role_index[name] = idx
        return idx

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_roles(self) -> int:
        return len(self.roles)

    def arity(self, relation: int) -> int:
        return self.relations[relation][1]

    @property
    def max_arity(self) -> int:
        if not self.relations:
            return 0
        return max(a for _, a in self.relations)

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(sorted({a for _, a in self.relations}))

    def to_dict(self) -> dict:
        out: dict = {
            "entities": self.entities,
            "relations": [[n, a] for n, a in self.relations],
        }
        if self.roles:
            out["roles"] = self.roles
            out["rel_roles"] = {str(r): list(g) for r, g in self.rel_roles.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        vocab = cls()
        for name in data["entities"]:
            vocab.add_entity(name)
        for name, arity in data["relations"]:
            vocab.add_relation(name, int(arity))
        for name in data.get("roles", []):
            vocab.add_role(name)
        for rel, group in data.get("rel_roles", {}).items():
            vocab.rel_roles[int(rel)] = tuple(int(g) for g in group)
        return vocab


def parse_tabular(lines: Iterable[str]) -> list[RawFact]:
    """Parse whitespace/tab separated lines: relation name then >= 2 entities."""
    facts: list[RawFact] = []
    for line_no, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < 3:
            raise ParseError(
                line_no, f"expected relation plus >= 2 entities, got {len(tokens)} token(s)"
            )
        facts.append((tokens[0], tuple(tokens[1:]), None))
    return facts


def parse_role_json(lines: Iterable[str]) -> list[RawFact]:
    """Parse JSON-lines facts mapping role names to entity names.

    Role keys are sorted lexicographically so role order is deterministic per
    relation; the relation name is the sorted role names joined with "|".
    Facts with a multi-valued role or a non-string value are dropped with a
    logged warning since the model scores fixed-length role-entity tuples.
    """
    facts: list[RawFact] = []
    dropped = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise ParseError(line_no, "expected a JSON object per line")
        if not obj:
            raise ParseError(line_no, "empty fact")
        if any(not isinstance(v, str) for v in obj.values()):
            dropped += 1
            log.warning("line %d: dropped fact with multi-valued or literal role", line_no)
            continue
        roles = tuple(sorted(obj.keys()))
        entities = tuple(obj[r] for r in roles)
        facts.append(("|".join(roles), entities, roles))
    if dropped:
        log.warning("dropped %d fact(s) with multi-valued or literal roles", dropped)
    return facts


def parse_normalized(lines: Iterable[str]) -> list[RawFact]:
    """Parse the normalized JSON-lines export produced by :func:`export_split`."""
    facts: list[RawFact] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
        try:
            rel = obj["relation"]
            entities = tuple(obj["entities"])
        except (KeyError, TypeError) as exc:
            raise ParseError(line_no, "missing 'relation' or 'entities'") from exc
        roles = tuple(obj["roles"]) if obj.get("roles") else None
        if len(entities) < 2:
            raise ParseError(line_no, "fact needs >= 2 entities")
        if roles is not None and len(roles) != len(entities):
            raise ParseError(line_no, "roles and entities differ in length")
        facts.append((rel, entities, roles))
    return facts


TruthKey = tuple[int, int, tuple[int, ...]]


class KnowledgeBase:
    """A dataset plus its ground-truth oracle.

    `truth` maps (relation, position, other entities in order) to the set of
    entity indices known true at that slot in any split. Instances are
    immutable after construction and safe to share across parallel readers.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        train: list[Fact],
        valid: list[Fact],
        test: list[Fact],
    ) -> None:
        self.vocab = vocab
        self.train = train
        self.valid = valid
        self.test = test
        self.truth: dict[TruthKey, set[int]] = {}
        for fact in self.all_facts():
            for pos in range(fact.arity):
                self.truth.setdefault(_truth_key(fact, pos), set()).add(
                    fact.entities[pos]
                )

    def all_facts(self) -> Iterable[Fact]:
        yield from self.train
        yield from self.valid
        yield from self.test

    def split(self, name: str) -> list[Fact]:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}") from None

    def true_entities_at(self, fact: Fact, position: int) -> set[int]:
        return self.truth.get(_truth_key(fact, position), set())

    def filtered_candidates(self, fact: Fact, position: int) -> np.ndarray:
        """Boolean mask of ranking candidates at one slot of a fact.

        Entities known true at this slot (in any split) are excluded, except
        the queried fact's own entity, which is always a candidate.
        """
        if not 0 <= position < fact.arity:
            raise IndexError(f"position {position} out of range for arity {fact.arity}")
        mask = np.ones(self.vocab.n_entities, dtype=bool)
        known = self.truth.get(_truth_key(fact, position))
        if known:
            mask[list(known)] = False
        mask[fact.entities[position]] = True
        return mask

    def stats(self) -> dict:
        arity_hist: dict[int, int] = {}
        for fact in self.train:
            arity_hist[fact.arity] = arity_hist.get(fact.arity, 0) + 1
        train_entities = {e for f in self.train for e in f.entities}
        train_relations = {f.relation for f in self.train}
        return {
            "n_entities": self.vocab.n_entities,
            "n_relations": self.vocab.n_relations,
            "max_arity": self.vocab.max_arity,
            "arities": list(self.vocab.arities),
            "n_train": len(self.train),
            "n_valid": len(self.valid),
            "n_test": len(self.test),
            "train_arity_histogram": {str(a): c for a, c in sorted(arity_hist.items())},
            "entities_outside_train": self.vocab.n_entities - len(train_entities),
            "relations_outside_train": self.vocab.n_relations - len(train_relations),
        }


def _truth_key(fact: Fact, position: int) -> TruthKey:
    others = fact.entities[:position] + fact.entities[position + 1 :]
    return (fact.relation, position, others)


def build_kb(
    train: list[RawFact],
    valid: list[RawFact] | None = None,
    test: list[RawFact] | None = None,
    explicit_roles: bool = False,
) -> KnowledgeBase:
    """Index raw facts into a KnowledgeBase.

    Vocabularies are built over the union of all splits so evaluation never
    meets an out-of-vocabulary entity; names appearing only in valid/test
    still get indices (reported by :meth:`KnowledgeBase.stats`).
    """
    valid = valid or []
    test = test or []
    if not train:
        raise DataError("empty training split")
    vocab = Vocabulary()
    splits: list[list[Fact]] = []
    for raw_split in (train, valid, test):
        facts: list[Fact] = []
        for name, entities, roles in raw_split:
            if explicit_roles and roles is None:
                raise DataError(
                    f"relation {name!r} has no role annotations but explicit roles were requested"
                )
            arity = len(entities)
            if arity < 2:
                raise DataError(f"relation {name!r}: facts need >= 2 entities")
            rel = vocab.add_relation(name, arity)
            ent_ids = tuple(vocab.add_entity(e) for e in entities)
            role_ids = None
            if roles is not None:
                role_ids = tuple(vocab.add_role(r) for r in roles)
                seen = vocab.rel_roles.setdefault(rel, role_ids)
                if seen != role_ids:
                    raise DataError(
                        f"relation {name!r} used with inconsistent role lists"
                    )
            facts.append(Fact(rel, ent_ids, role_ids))
        splits.append(facts)
    kb = KnowledgeBase(vocab, *splits)
    log.info("loaded KB: %s", kb.stats())
    return kb


def subset_by_arity(
    kb: KnowledgeBase,
    keep: Callable[[int], bool] = lambda arity: True,
    binary_keep_ratio: float = 1.0,
    seed: int = 0,
) -> KnowledgeBase:
    """Filter the training split by arity and downsample binary facts.

    Among binary training facts passing the predicate, a uniformly random
    fraction `binary_keep_ratio` is kept (exact count, rounded), chosen
    deterministically from `seed`. Valid/test are untouched; the truth index
    is rebuilt over the new training split plus the original valid/test.
    """
    if not 0.0 <= binary_keep_ratio <= 1.0:
        raise DataError(f"binary_keep_ratio must be in [0, 1], got {binary_keep_ratio}")
    kept = [i for i, f in enumerate(kb.train) if keep(f.arity)]
    binary = [i for i in kept if kb.train[i].arity == 2]
    n_keep = int(round(binary_keep_ratio * len(binary)))
    selected = {i for i in kept if kb.train[i].arity != 2}
    if n_keep < len(binary):
        rng = make_rng(seed)
        chosen = rng.choice(len(binary), size=n_keep, replace=False)
        selected.update(binary[i] for i in chosen)
    else:
        selected.update(binary)
    new_train = [kb.train[i] for i in sorted(selected)]
    if not new_train:
        raise DataError("empty training split after arity/ratio subsetting")
    return KnowledgeBase(kb.vocab, new_train, kb.valid, kb.test)


def export_split(kb: KnowledgeBase, split: str) -> Iterable[str]:
    """Render a split in the normalized JSON-lines format."""
    vocab = kb.vocab
    for fact in kb.split(split):
        name, arity = vocab.relations[fact.relation]
        obj: dict = {
            "relation": name,
            "arity": arity,
            "entities": [vocab.entities[e] for e in fact.entities],
        }
        if fact.roles is not None:
            obj["roles"] = [vocab.roles[r] for r in fact.roles]
        yield json.dumps(obj, ensure_ascii=False)
