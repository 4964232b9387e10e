"""Preference scores, pairwise losses and the DPO training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Example
from .errors import ContractViolation, EmptyPreferenceSetError
from .model import PolicySnapshot, TinyLM, batch_sequence_logprob, derive, pad_batch, same_vocab
from .optim import OPTIMIZERS, make_optimizer
from .pairforge import PairSet, ResponsePair
from .rng import rng
from .sft import prompt_ids, response_ids
from .vocab import Vocab

log = logging.getLogger(__name__)

LOSS_MODES = ("logsigmoid", "hinge-margin", "paper-literal")


@dataclass(frozen=True)
class PrefConfig:
    beta: float = 0.1
    loss_mode: str = "logsigmoid"
    margin: float = 1.0
    lr: float = 5e-5
    batch_size: int = 16
    epochs: int = 3
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.beta <= 0:
            raise ContractViolation("beta must be positive")
        if self.margin < 0:
            raise ContractViolation("margin must be nonnegative")
        if self.loss_mode not in LOSS_MODES:
            raise ContractViolation(f"unknown loss mode {self.loss_mode!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractViolation("lr and batch size must be positive, epochs nonnegative")
        if self.optimizer not in OPTIMIZERS:
            raise ContractViolation(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ScoredPair:
    pair: ResponsePair
    s_strong: float
    s_weak: float
    beta: float
    reference_id: str

    def __post_init__(self):
        if not (math.isfinite(self.s_strong) and math.isfinite(self.s_weak)):
            raise ContractViolation("scores must be finite")

    @property
    def gap(self) -> float:
        return self.s_strong - self.s_weak


def _response_tokens(vocab: Vocab, response) -> list[int]:
    if isinstance(response, tuple) and len(response) == 2 and isinstance(response[0], str):
        return response_ids(vocab, response[0], response[1])
    return [int(i) for i in response]


def pref_score(policy: PolicySnapshot, reference: PolicySnapshot, question: Example | str,
               response, beta: float, vocab: Vocab | None = None) -> float:
    """``beta * (log p_policy - log p_reference)`` of a response to a question.

    ``response`` is ``(rationale, answer)`` text, serialized as
    ``rationale BOA answer EOS``, or an explicit token sequence.
    """
    same_vocab(policy, reference)
    vocab = vocab or Vocab()
    policy.check_vocab(vocab)
    text = question.prompt_text if isinstance(question, Example) else question
    p = prompt_ids(vocab, text)
    c = _response_tokens(vocab, response)
    lp = batch_sequence_logprob(policy, [p], [c])[0]
    lr = batch_sequence_logprob(reference, [p], [c])[0]
    return beta * float(lp - lr)


def ranking_loss_literal(scores: Sequence[float]) -> float:
    """Sum of ``s_i - s_j`` over ordered pairs with ``s_i > s_j``.

    With the scores sorted, the gap between neighbours ``k-1`` and ``k`` lies
    inside ``k * (n - k)`` of those pairs, so the total is a weighted sum of
    nonnegative neighbour gaps (exactly zero when all scores tie).
    """
    s = np.sort(np.asarray(scores, dtype=np.float64))
    n = s.size
    if n < 2:
        return 0.0
    k = np.arange(1, n)
    return float(np.sum(np.diff(s) * (k * (n - k))))


def _pair_loss_and_slope(gap: np.ndarray, cfg: PrefConfig) -> tuple[np.ndarray, np.ndarray]:
    """Loss as a function of ``gap = s_strong - s_weak`` and its derivative."""
    if cfg.loss_mode == "logsigmoid":
        loss = np.logaddexp(0.0, -gap)
        slope = -0.5 * (1.0 - np.tanh(0.5 * gap))  # -sigmoid(-gap)
    elif cfg.loss_mode == "hinge-margin":
        loss = np.maximum(0.0, cfg.margin - gap)
        slope = -(cfg.margin - gap > 0).astype(np.float64)
    else:
        loss = np.maximum(0.0, gap)
        slope = (gap > 0).astype(np.float64)
    return loss, slope


def dpo_pair_loss(s_strong: float, s_weak: float, cfg: PrefConfig) -> float:
    loss, _ = _pair_loss_and_slope(np.asarray(s_strong - s_weak, dtype=np.float64), cfg)
    return float(loss)


def iter_loss(scores_strong_gen: Sequence[float], scores_weak_gen: Sequence[float],
              cfg: PrefConfig) -> float:
    """Per-question pair losses summed, newer policy's response as the strong side."""
    if len(scores_strong_gen) != len(scores_weak_gen):
        raise ContractViolation("score lists must align question by question")
    if not len(scores_strong_gen):
        return 0.0
    gap = np.asarray(scores_strong_gen, dtype=np.float64) - np.asarray(scores_weak_gen, dtype=np.float64)
    return float(np.sum(_pair_loss_and_slope(gap, cfg)[0]))


class DpoLoss:
    """Mean pair loss over a batch; reference log-probs are held fixed."""

    def __init__(self, model: TinyLM, prompts: Sequence[Sequence[int]],
                 strong: Sequence[Sequence[int]], weak: Sequence[Sequence[int]],
                 ref_strong: np.ndarray, ref_weak: np.ndarray, cfg: PrefConfig):
        if not prompts:
            raise ContractViolation("empty preference batch")
        self.model = model
        self.cfg = cfg
        self.n = len(prompts)
        full = [list(p) + list(c) for p, c in zip(prompts, strong)]
        full += [list(p) + list(c) for p, c in zip(prompts, weak)]
        if max(len(s) for s in full) > model.arch.context_length:
            raise ContractViolation("pair exceeds the context window")
        self.ids = pad_batch(full)
        T = self.ids.shape[1]
        self.mask = np.zeros((2 * self.n, T - 1))
        plens = list(prompts) * 2
        for i, (p, s) in enumerate(zip(plens, full)):
            self.mask[i, len(p) - 1: len(s) - 1] = 1.0
        self.ref_strong = np.asarray(ref_strong, dtype=np.float64)
        self.ref_weak = np.asarray(ref_weak, dtype=np.float64)

    def _gaps(self, seq_lp: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = self.cfg.beta
        s_strong = b * (seq_lp[: self.n] - self.ref_strong)
        s_weak = b * (seq_lp[self.n:] - self.ref_weak)
        return s_strong, s_weak, s_strong - s_weak

    def scores(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lp, _ = self.model.forward_logprobs(params, self.ids, keep_cache=False)
        s, w, _ = self._gaps((lp * self.mask).sum(1))
        return s, w

    def value(self, params: np.ndarray) -> float:
        s, w = self.scores(params)
        return float(np.mean(_pair_loss_and_slope(s - w, self.cfg)[0]))

    def value_and_grad(self, params: np.ndarray):
        lp, state = self.model.forward_logprobs(params, self.ids, keep_cache=True)
        _, _, gap = self._gaps((lp * self.mask).sum(1))
        loss, slope = _pair_loss_and_slope(gap, self.cfg)
        coef = slope * self.cfg.beta / self.n
        w = self.mask * np.concatenate([coef, -coef])[:, None]
        self.last_gap = gap
        return float(np.mean(loss)), self.model.logprob_grad(params, state, w)


def _pair_tokens(pairs: Sequence[ResponsePair], vocab: Vocab):
    prompts = [prompt_ids(vocab, p.question.prompt_text) for p in pairs]
    strong = [list(p.strong_ids) if p.strong_ids else response_ids(vocab, p.r1, p.y1) for p in pairs]
    weak = [list(p.weak_ids) if p.weak_ids else response_ids(vocab, p.r0, p.y0) for p in pairs]
    return prompts, strong, weak


def score_pairs(policy: PolicySnapshot, reference: PolicySnapshot, pairs: Sequence[ResponsePair],
                beta: float, vocab: Vocab) -> list[ScoredPair]:
    same_vocab(policy, reference)
    if not pairs:
        return []
    prompts, strong, weak = _pair_tokens(pairs, vocab)
    ps = batch_sequence_logprob(policy, prompts, strong) - batch_sequence_logprob(reference, prompts, strong)
    pw = batch_sequence_logprob(policy, prompts, weak) - batch_sequence_logprob(reference, prompts, weak)
    return [ScoredPair(p, beta * float(a), beta * float(b), beta, reference.version_id)
            for p, a, b in zip(pairs, ps, pw)]


def dpo_train(init: PolicySnapshot, reference: PolicySnapshot,
              accepted: PairSet | Sequence[ResponsePair], cfg: PrefConfig, seed: int,
              vocab: Vocab, history: list | None = None) -> PolicySnapshot:
    """Descend the mean pair loss over accepted pairs.

    Reference log-probs are computed once; policy scores are recomputed at
    every step. ``history`` receives ``{"epoch", "mean_loss", "mean_gap",
    "loss_mode", "beta"}`` per epoch, averaged over that epoch's batches.
    """
    same_vocab(init, reference)
    init.check_vocab(vocab)
    pairs = accepted.accepted if isinstance(accepted, PairSet) else list(accepted)
    if not pairs:
        raise EmptyPreferenceSetError("no accepted preference pairs")
    prompts, strong, weak = _pair_tokens(pairs, vocab)
    ref_s = batch_sequence_logprob(reference, prompts, strong)
    ref_w = batch_sequence_logprob(reference, prompts, weak)
    model = init.model
    params = np.array(init.params)
    opt = make_optimizer(cfg.optimizer, params.size, cfg.lr)
    for epoch in range(1, cfg.epochs + 1):
        order = rng(seed, "dpo", epoch).permutation(len(pairs))
        losses, gaps = [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            spec = DpoLoss(model, [prompts[i] for i in idx], [strong[i] for i in idx],
                           [weak[i] for i in idx], ref_s[idx], ref_w[idx], cfg)
            value, grad = spec.value_and_grad(params)
            model.check_finite(grad)
            params = opt.step(params, grad)
            losses.append(value)
            gaps.append(float(np.mean(spec.last_gap)))
        rec = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "mean_gap": float(np.mean(gaps)),
               "loss_mode": cfg.loss_mode, "beta": cfg.beta}
        log.info("dpo epoch %d loss %.4f gap %.4f", epoch, rec["mean_loss"], rec["mean_gap"])
        if history is not None:
            history.append(rec)
    return derive(init, params, tag="dpo")
