import numpy as np
import pytest

from ramkb.kb import Fact, KnowledgeBase, Vocabulary, build_kb, parse_tabular
from ramkb.mathcore import make_rng


@pytest.fixture
def toy_kb():
    """Five mixed-arity facts over five entities, no valid/test."""
    raw = parse_tabular(
        [
            "r1 a b c",
            "r1 b c d",
            "r2 a d",
            "r2 c b",
            "r3 d a e b",
        ]
    )
    return build_kb(raw)


def make_vocab(n_entities, arities, explicit_roles=False, seed=0):
    """Vocabulary with one relation per listed arity."""
    rng = make_rng(seed, 99)
    vocab = Vocabulary()
    for i in range(n_entities):
        vocab.add_entity(f"e{i}")
    for r, arity in enumerate(arities):
        rel = vocab.add_relation(f"r{r}", arity)
        if explicit_roles:
            pool = rng.choice(2 * max(arities) + 2, size=arity, replace=False)
            vocab.rel_roles[rel] = tuple(vocab.add_role(f"g{int(g)}") for g in pool)
    return vocab


def random_facts(vocab, n_facts, seed=0):
    rng = make_rng(seed, 98)
    facts = []
    for _ in range(n_facts):
        rel = int(rng.integers(0, vocab.n_relations))
        arity = vocab.arity(rel)
        ents = tuple(int(e) for e in rng.integers(0, vocab.n_entities, arity))
        facts.append(Fact(rel, ents, vocab.rel_roles.get(rel)))
    return facts


def random_kb(n_entities, arities, n_train, n_valid=0, n_test=0, seed=0,
              explicit_roles=False):
    vocab = make_vocab(n_entities, arities, explicit_roles, seed)
    train = random_facts(vocab, n_train, seed)
    valid = random_facts(vocab, n_valid, seed + 1) if n_valid else []
    test = random_facts(vocab, n_test, seed + 2) if n_test else []
    return KnowledgeBase(vocab, train, valid, test)
