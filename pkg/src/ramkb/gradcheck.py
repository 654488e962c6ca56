"""Finite-difference validation of the analytic gradients.

Central differences with a fixed step are compared against the backward
pass, coordinate by coordinate, over a set of randomly generated toy models
covering every trainable mode. The comparison only ever calls the
forward-path loss, so it is independent of the gradient code it checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import GradientBuffer, backward_group, forward_group, group_losses, split_groups
from .kb import Fact, Vocabulary
from .mathcore import make_rng
from .model import ModelConfig, ModelParams
from .training import _group_candidates, _group_masks

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
# coordinates where both gradients are below this are compared on this scale
REL_FLOOR = 1e-4


@dataclass
class TrialReport:
    mode: str
    dims: tuple
    family_errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.family_errors.values(), default=0.0)


@dataclass
class GradcheckReport:
    trials: list[TrialReport]
    tol: float

    @property
    def family_errors(self) -> dict[str, float]:
        merged: dict[str, float] = {}
        for trial in self.trials:
            for family, err in trial.family_errors.items():
                merged[family] = max(merged.get(family, 0.0), err)
        return merged

    @property
    def max_error(self) -> float:
        return max((t.max_error for t in self.trials), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float((np.abs(analytic - numeric) / denom).max())


def _loss(params, facts, candidates, masks) -> float:
    total = 0.0
    basis_cache: dict = {}
    for spec in split_groups(params, facts):
        fwd = forward_group(
            params, spec, candidates[spec.arity], masks[spec.arity], basis_cache
        )
        total += float(group_losses(fwd).sum())
    return total / len(facts)


def check_batch(
    params: ModelParams,
    facts: list[Fact],
    candidates: dict,
    masks: dict,
    step: float = DEFAULT_STEP,
) -> dict[str, float]:
    """Max relative error per parameter family for one fixed batch."""
    buf = GradientBuffer(params)
    basis_cache: dict = {}
    for spec in split_groups(params, facts):
        fwd = forward_group(
            params, spec, candidates[spec.arity], masks[spec.arity], basis_cache
        )
        backward_group(params, fwd, buf, 1.0 / len(facts))

    errors: dict[str, float] = {}
    for key in params.slots():
        array = params.data[key]
        analytic = buf.grads.get(key)
        if analytic is None:
            analytic = np.zeros_like(array)
        numeric = np.zeros_like(array)
        flat = array.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = _loss(params, facts, candidates, masks)
            flat[i] = original - step
            down = _loss(params, facts, candidates, masks)
            flat[i] = original
            numeric_flat[i] = (up - down) / (2 * step)
        family = key[0]
        err = relative_error(analytic, numeric)
        errors[family] = max(errors.get(family, 0.0), err)
    return errors


def _random_trial(seed: int, trial: int) -> tuple[ModelParams, list[Fact], dict, dict]:
    rng = make_rng(seed, 7, trial)
    modes = ["latent", "latent", "extended", "explicit",
             "preset:DistMult", "preset:SimplE", "preset:ComplEx", "preset:QuatE"]
    mode_str = modes[trial % len(modes)]
    mode, preset = ModelConfig.parse_mode(mode_str)
    d = int(rng.integers(2, 6))
    m = int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    if mode == "extended":
        cfg = ModelConfig(
            embed_dim=d, multiplicity=m, latent_size=k, mode=mode,
            role_multiplicity=int(rng.integers(1, 3)),
            patterns_per_role=int(rng.integers(1, 3)),
        )
    else:
        cfg = ModelConfig(
            embed_dim=d, multiplicity=m, latent_size=k, mode=mode, preset=preset
        )

    n_entities = int(rng.integers(4, 8))
    vocab = Vocabulary()
    for e in range(n_entities):
        vocab.add_entity(f"e{e}")
    arity_pool = [2] if mode == "preset" else [2, 3, 4]
    n_relations = int(rng.integers(1, 4))
    for r in range(n_relations):
        arity = int(rng.choice(arity_pool))
        rel = vocab.add_relation(f"r{r}", arity)
        if mode == "explicit":
            vocab.rel_roles[rel] = tuple(
                vocab.add_role(f"g{int(g)}")
                for g in rng.choice(8, size=arity, replace=False)
            )
    facts = []
    for _ in range(int(rng.integers(3, 7))):
        rel = int(rng.integers(0, vocab.n_relations))
        arity = vocab.arity(rel)
        ents = tuple(int(e) for e in rng.integers(0, n_entities, size=arity))
        roles = vocab.rel_roles.get(rel)
        facts.append(Fact(rel, ents, roles))

    params = ModelParams.init(cfg, vocab, seed=seed + trial)
    # random mixing weights exercise both softmax pullbacks away from uniform
    for key in params.slots():
        if key[0] in ("alpha", "beta"):
            params.data[key] = rng.normal(0.0, 0.5, size=params.data[key].shape)
        if key[0] == "omega":
            params.data[key] = rng.normal(1.0, 0.3, size=params.data[key].shape)

    sampled = trial % 3 == 1
    negatives = int(rng.integers(1, n_entities)) if sampled else "full"
    dropout = 0.3 if trial % 4 == 3 else 0.0
    fact_rngs = [make_rng(seed, 8, trial, i) for i in range(len(facts))]
    candidates = {}
    masks = {}
    for spec in split_groups(params, facts):
        candidates[spec.arity] = _group_candidates(
            spec, facts, n_entities, negatives, fact_rngs
        )
        masks[spec.arity] = _group_masks(spec, params, dropout, fact_rngs)
    return params, facts, candidates, masks


def run_gradcheck(
    trials: int = 20, seed: int = 0, tol: float = DEFAULT_TOL, step: float = DEFAULT_STEP
) -> GradcheckReport:
    """Compare analytic and numeric gradients over random toy models."""
    reports = []
    for trial in range(trials):
        params, facts, candidates, masks = _random_trial(seed, trial)
        errors = check_batch(params, facts, candidates, masks, step)
        dims = (params.cfg.embed_dim, params.cfg.multiplicity, params.cfg.latent_size)
        reports.append(TrialReport(params.cfg.mode_string(), dims, errors))
    return GradcheckReport(reports, tol)
