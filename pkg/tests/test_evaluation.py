import numpy as np
import pytest

from oracles import sort_rank
from ramkb.errors import DataError
from ramkb.evaluation import EvalReport, evaluate, rank, report_from_ranks
from ramkb.kb import Fact, KnowledgeBase, build_kb, parse_tabular
from ramkb.model import ModelConfig, ModelParams, score_batch_position

from conftest import make_vocab, random_kb
from test_model import randomized_params


def test_rank_one_for_unique_maximum():
    kb = random_kb(6, (2,), n_train=4, seed=1)
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = randomized_params(cfg, kb.vocab, seed=2)
    fact = kb.train[0]
    true_e = fact.entities[0]
    params.data[("ent",)][true_e] *= 100.0  # dominate every candidate
    if rank(params, kb, fact, 0) != 1:
        params.data[("ent",)][true_e] *= -100.0
    assert rank(params, kb, fact, 0) == 1


def test_all_ties_rank_one():
    kb = random_kb(6, (2,), n_train=4, seed=3)
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = ModelParams.init(cfg, kb.vocab, seed=4)
    params.data[("ent",)][:] = params.data[("ent",)][0]
    fact = kb.train[0]
    assert rank(params, kb, fact, 1) == 1


def test_rank_matches_sort_oracle_on_toy_kb():
    kb = random_kb(10, (2, 3), n_train=18, n_test=6, seed=5)
    cfg = ModelConfig(embed_dim=4, multiplicity=2, latent_size=3)
    params = randomized_params(cfg, kb.vocab, seed=6)
    for fact in kb.test:
        for pos in range(fact.arity):
            scores = score_batch_position(params, fact, pos)
            mask = kb.filtered_candidates(fact, pos)
            expected = sort_rank(list(scores), mask, fact.entities[pos])
            assert rank(params, kb, fact, pos) == expected


def test_report_hand_case():
    report = report_from_ranks([(2, 1), (2, 4)])
    assert report.mrr == pytest.approx((1 + 0.25) / 2)
    assert report.hits[1] == pytest.approx(0.5)
    assert report.hits[3] == pytest.approx(0.5)
    assert report.hits[10] == pytest.approx(1.0)
    assert report.n_queries == 2


def test_all_rank_one_gives_perfect_report():
    report = report_from_ranks([(2, 1), (3, 1), (3, 1)])
    assert report.mrr == 1.0
    assert all(v == 1.0 for v in report.hits.values())


def test_evaluate_counts_all_positions_per_arity():
    kb = random_kb(8, (2, 4), n_train=10, n_test=6, seed=7)
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = randomized_params(cfg, kb.vocab, seed=8)
    report = evaluate(params, kb, split="test")
    assert report.n_queries == sum(f.arity for f in kb.test)
    assert sum(s.n_queries for s in report.per_arity.values()) == report.n_queries
    for arity, stats in report.per_arity.items():
        assert stats.n_queries == sum(f.arity for f in kb.test if f.arity == arity)


def test_evaluate_matches_per_query_rank():
    kb = random_kb(9, (2, 3), n_train=12, n_test=5, seed=9)
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = randomized_params(cfg, kb.vocab, seed=10)
    report = evaluate(params, kb, split="test")
    expected = report_from_ranks(
        (fact.arity, rank(params, kb, fact, pos))
        for fact in kb.test
        for pos in range(fact.arity)
    )
    assert report.mrr == pytest.approx(expected.mrr, abs=1e-12)
    assert report.hits == expected.hits


def test_evaluate_deterministic_and_thread_invariant():
    kb = random_kb(9, (2, 3), n_train=12, n_test=8, seed=11)
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = randomized_params(cfg, kb.vocab, seed=12)
    a = evaluate(params, kb, split="test")
    b = evaluate(params, kb, split="test")
    c = evaluate(params, kb, split="test", threads=3)
    assert a.mrr == b.mrr == c.mrr
    assert a.hits == b.hits == c.hits


def test_hits_monotone_in_k():
    kb = random_kb(12, (2, 3), n_train=20, n_test=10, seed=13)
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = randomized_params(cfg, kb.vocab, seed=14)
    report = evaluate(params, kb, split="test")
    assert report.hits[1] <= report.hits[3] <= report.hits[10]
    assert 0.0 <= report.mrr <= 1.0


def test_filter_monotonicity_removing_fact_cannot_improve_rank():
    base_lines = ["r a b", "r c b", "r d b"]
    kb_full = build_kb(parse_tabular(base_lines), test=parse_tabular(["r a b"]))
    kb_small = build_kb(parse_tabular(base_lines[:2]), test=parse_tabular(["r a b"]))
    # same vocabulary order in both builds
    assert kb_full.vocab.entities == kb_small.vocab.entities
    cfg = ModelConfig(embed_dim=3, multiplicity=2, latent_size=2)
    params = randomized_params(cfg, kb_full.vocab, seed=15)
    fact = kb_full.test[0]
    for pos in range(fact.arity):
        assert rank(params, kb_small, fact, pos) >= rank(params, kb_full, fact, pos)


def test_empty_split_rejected():
    kb = random_kb(5, (2,), n_train=3, seed=16)
    cfg = ModelConfig(embed_dim=2, multiplicity=1, latent_size=1)
    params = ModelParams.init(cfg, kb.vocab, seed=0)
    with pytest.raises(DataError):
        evaluate(params, kb, split="test")


def test_report_serialization_shapes():
    report = report_from_ranks([(2, 1), (2, 4), (3, 2)], seconds=1.5)
    data = report.to_dict()
    assert set(data) == {"mrr", "hits", "n_queries", "seconds", "per_arity"}
    csv_text = report.per_arity_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0] == "arity,n_queries,mrr,hit1,hit3,hit10"
    assert len(lines) == 3
    assert report.table().count("arity") == 2
