import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_snapshot
from weakforge.corpus import Example
from weakforge.errors import ContractViolation, EmptyPreferenceSetError, IncompatibleSnapshotError
from weakforge.gradcheck import check_gradient
from weakforge.model import ArchConfig, PolicySnapshot, batch_sequence_logprob, derive, sequence_logprob
from weakforge.pairforge import ResponsePair, accept_all
from weakforge.prefopt import (DpoLoss, PrefConfig, dpo_pair_loss, dpo_train, iter_loss, pref_score,
                               ranking_loss_literal, score_pairs)
from weakforge.sft import prompt_ids, response_ids
from weakforge.vocab import Vocab

MODES = ("logsigmoid", "hinge-margin", "paper-literal")
Q = Example("q", "puzzle", "(1+2)*3=?", answer="9", split="unlabeled")
finite = st.floats(-50, 50, allow_nan=False)


# -- pref_score ---------------------------------------------------------------


def test_pref_score_matches_oracle(policy, reference, vocab):
    got = pref_score(policy, reference, Q, ("1+2=3", "9"), 0.3, vocab)
    want = oracles.pref_score(policy.params, reference.params, prompt_ids(vocab, Q.prompt_text),
                              response_ids(vocab, "1+2=3", "9"), 0.3, policy.arch, vocab.size)
    assert abs(got - want) < 1e-10


def test_zero_identity(policy, vocab):
    twin = PolicySnapshot.create(policy.arch, vocab, policy.params, tag="twin")
    for beta in (0.05, 1.0, 7.0):
        assert pref_score(policy, twin, Q, ("abc", "1"), beta, vocab) == 0.0


def test_beta_linearity_exact(policy, reference, vocab):
    s1 = pref_score(policy, reference, Q, ("x=1", "2"), 1.0, vocab)
    for beta in (0.05, 0.1, 0.5, 2.0):
        assert pref_score(policy, reference, Q, ("x=1", "2"), beta, vocab) == beta * s1


def test_definition(policy, reference, vocab):
    p, r = prompt_ids(vocab, Q.prompt_text), response_ids(vocab, "ab", "c")
    d = sequence_logprob(policy, p, r) - sequence_logprob(reference, p, r)
    assert pref_score(policy, reference, Q, ("ab", "c"), 2.0, vocab) == 2.0 * d
    # explicit token responses are scored verbatim
    assert pref_score(policy, reference, Q, r, 2.0, vocab) == 2.0 * d


def test_vocab_mismatch(policy, vocab):
    other = random_snapshot(policy.arch, Vocab(symbols="abc"), 1)
    with pytest.raises(IncompatibleSnapshotError):
        pref_score(policy, other, Q, ("a", "b"), 0.1, vocab)


# -- ranking_loss_literal ------------------------------------------------------


def test_ranking_examples():
    assert ranking_loss_literal([3, 1]) == 2
    assert ranking_loss_literal([5, 2, 0]) == 10
    assert ranking_loss_literal([4, 4, 4]) == 0
    assert ranking_loss_literal([]) == 0


def test_ranking_matches_oracle_fixture():
    scores = [0.3, -1.2, 2.5, 0.3, 7.0, -0.01]
    assert abs(ranking_loss_literal(scores) - oracles.ranking_loss(scores)) < 1e-10


@settings(max_examples=200)
@given(st.lists(finite, max_size=9), st.randoms())
def test_ranking_properties(scores, rnd):
    v = ranking_loss_literal(scores)
    assert abs(v - oracles.ranking_loss(scores)) <= 1e-10 * max(1.0, abs(v))
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert abs(ranking_loss_literal(shuffled) - v) <= 1e-10 * max(1.0, abs(v))
    assert v >= 0
    assert (v == 0) == (len(set(scores)) <= 1)


# -- dpo_pair_loss ---------------------------------------------------------------


def test_pair_loss_examples():
    cfg = PrefConfig()
    assert abs(dpo_pair_loss(1.5, 1.5, cfg) - math.log(2)) < 1e-15
    assert abs(dpo_pair_loss(10.0, 0.0, cfg) - 4.53989e-5) < 1e-10
    hinge = PrefConfig(loss_mode="hinge-margin", margin=1.0)
    assert dpo_pair_loss(1.0, 0.0, hinge) == 0.0
    assert dpo_pair_loss(0.0, 0.0, hinge) == 1.0
    lit = PrefConfig(loss_mode="paper-literal")
    assert dpo_pair_loss(3.0, 1.0, lit) == 2.0 and dpo_pair_loss(1.0, 3.0, lit) == 0.0


@settings(max_examples=200)
@given(finite, finite, finite, st.sampled_from(MODES))
def test_shift_invariance_and_nonnegative(a, b, c, mode):
    cfg = PrefConfig(loss_mode=mode)
    x = dpo_pair_loss(a, b, cfg)
    assert x >= 0
    assert abs(dpo_pair_loss(a + c, b + c, cfg) - x) <= 1e-9 * max(1.0, x)
    assert abs(x - oracles.pair_loss(a, b, mode)) <= 1e-12 * max(1.0, x)


@settings(max_examples=300)
@given(st.floats(-30, 30, allow_nan=False))
def test_reflection(d):
    cfg = PrefConfig()
    assert abs(dpo_pair_loss(-d, 0.0, cfg) - (dpo_pair_loss(d, 0.0, cfg) + d)) <= 1e-12


def test_config_validation():
    with pytest.raises(ContractViolation):
        PrefConfig(beta=0)
    with pytest.raises(ContractViolation):
        PrefConfig(margin=-1)
    with pytest.raises(ContractViolation):
        PrefConfig(loss_mode="ipo")


# -- iter_loss ------------------------------------------------------------------


def test_iter_loss_examples():
    cfg = PrefConfig()
    assert iter_loss([], [], cfg) == 0.0
    assert abs(iter_loss([0.4], [0.4], cfg) - math.log(2)) < 1e-15
    strong, weak = [0.5, -1.0, 2.0], [0.1, 0.3, 2.5]
    want = sum(dpo_pair_loss(a, b, cfg) for a, b in zip(strong, weak))
    assert abs(iter_loss(strong, weak, cfg) - want) < 1e-12
    for mode in MODES:
        c = PrefConfig(loss_mode=mode)
        assert abs(iter_loss(strong, weak, c) - oracles.iter_loss(strong, weak, mode)) < 1e-10
    with pytest.raises(ContractViolation):
        iter_loss([1.0], [], cfg)


# -- DPO gradients and training ----------------------------------------------------


def _pairs(vocab, n=4):
    out = []
    for i in range(n):
        q = Example(f"q{i}", "puzzle", f"({i}+2)*3=?", answer=str((i + 2) * 3), split="unlabeled")
        out.append(ResponsePair(q, f"{i}+2={i + 2}", str((i + 2) * 3), "zq", "", "s", "w"))
    return out


def _dpo_spec(policy, reference, vocab, cfg, pairs):
    prompts = [prompt_ids(vocab, p.question.prompt_text) for p in pairs]
    strong = [response_ids(vocab, p.r1, p.y1) for p in pairs]
    weak = [response_ids(vocab, p.r0, p.y0) for p in pairs]
    rs = batch_sequence_logprob(reference, prompts, strong)
    rw = batch_sequence_logprob(reference, prompts, weak)
    return DpoLoss(policy.model, prompts, strong, weak, rs, rw, cfg)


@pytest.mark.parametrize("mode", MODES)
def test_dpo_gradient_off_kink(vocab, mode):
    arch = ArchConfig(d_model=4, context_length=24, n_head=2, ff_mult=2)
    pol, ref = random_snapshot(arch, vocab, 21), random_snapshot(arch, vocab, 22)
    cfg = PrefConfig(loss_mode=mode, beta=0.5, margin=1.0)
    spec = _dpo_spec(pol, ref, vocab, cfg, _pairs(vocab, 2))
    gap = spec.scores(np.array(pol.params))
    kink = 0.0 if mode == "paper-literal" else (cfg.margin if mode == "hinge-margin" else None)
    if kink is not None:
        assert np.all(np.abs((gap[0] - gap[1]) - kink) > 1e-3)
    assert check_gradient(spec, np.array(pol.params)).ok(1e-4)


def test_score_pairs_matches_pref_score(policy, reference, vocab):
    pairs = _pairs(vocab, 3)
    scored = score_pairs(policy, reference, pairs, 0.2, vocab)
    for sp, p in zip(scored, pairs):
        assert abs(sp.s_strong - pref_score(policy, reference, p.question, (p.r1, p.y1), 0.2, vocab)) < 1e-12
        assert sp.reference_id == reference.version_id


def test_train_epochs_zero(policy, reference, vocab):
    out = dpo_train(policy, reference, _pairs(vocab), PrefConfig(epochs=0), 1, vocab)
    assert np.array_equal(out.params, policy.params) and out.parent_id == policy.version_id


def test_train_empty(policy, vocab):
    empty = accept_all([])
    with pytest.raises(EmptyPreferenceSetError):
        dpo_train(policy, policy, empty, PrefConfig(), 1, vocab)


def test_train_fixture_descends_and_gap_grows(policy, vocab):
    ref = derive(policy, policy.params, "reference")
    cfg = PrefConfig(lr=1e-2, epochs=4, batch_size=2, optimizer="adam")
    hist = []
    a = dpo_train(policy, ref, _pairs(vocab), cfg, 3, vocab, hist)
    b = dpo_train(policy, ref, _pairs(vocab), cfg, 3, vocab)
    assert a.params.tobytes() == b.params.tobytes()
    assert hist[-1]["mean_loss"] < hist[0]["mean_loss"]
    assert hist[-1]["mean_gap"] >= hist[0]["mean_gap"]
    assert set(hist[0]) == {"epoch", "mean_loss", "mean_gap", "loss_mode", "beta"}
    spec = _dpo_spec(policy, ref, vocab, cfg, _pairs(vocab))
    assert spec.value(np.array(a.params)) < spec.value(np.array(policy.params))


def test_reference_is_not_mutated(policy, reference, vocab):
    before = reference.params.tobytes()
    dpo_train(policy, reference, _pairs(vocab), PrefConfig(epochs=1, lr=1e-2), 0, vocab)
    assert reference.params.tobytes() == before
