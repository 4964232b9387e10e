"""Supervised fine-tuning on seed question/rationale/answer triples."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Dataset, Example
from .errors import ContractViolation, EmptyTrainingSetError, ExampleTooLongError
from .model import PolicySnapshot, TinyLM, derive, pad_batch
from .optim import OPTIMIZERS, make_optimizer
from .rng import rng
from .vocab import TokenSequence, Vocab

log = logging.getLogger(__name__)

LOSS_SPANS = ("rationale-and-answer", "rationale-only")


@dataclass(frozen=True)
class SftConfig:
    lr: float = 5e-5
    batch_size: int = 16
    epochs: int = 3
    loss_span: str = "rationale-and-answer"
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractViolation("lr and batch size must be positive, epochs nonnegative")
        if self.loss_span not in LOSS_SPANS:
            raise ContractViolation(f"unknown loss span {self.loss_span!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ContractViolation(f"unknown optimizer {self.optimizer!r}")


def prompt_ids(vocab: Vocab, question_text: str) -> list[int]:
    """``BOQ question BOR``: the prefix every response is generated from."""
    return [vocab.boq] + vocab.encode(question_text, unknown="?") + [vocab.bor]


def response_ids(vocab: Vocab, rationale: str, answer: str) -> list[int]:
    """``rationale BOA answer EOS``."""
    return (vocab.encode(rationale, unknown="?") + [vocab.boa]
            + vocab.encode(answer, unknown="?") + [vocab.eos])


def serialize_text(vocab: Vocab, question: str, rationale: str, answer: str,
                   context_length: int | None = None) -> TokenSequence:
    p = prompt_ids(vocab, question)
    r = vocab.encode(rationale, unknown="?")
    a = vocab.encode(answer, unknown="?")
    ids = p + r + [vocab.boa] + a + [vocab.eos]
    if context_length is not None and len(ids) > context_length:
        raise ExampleTooLongError(f"{len(ids)} tokens > context {context_length}")
    q0, r0 = 1, len(p)
    a0 = r0 + len(r) + 1
    spans = {"question": (q0, r0 - 1), "rationale": (r0, r0 + len(r)), "answer": (a0, a0 + len(a))}
    return TokenSequence(tuple(ids), spans)


def serialize_example(ex: Example, vocab: Vocab, context_length: int | None = None) -> TokenSequence:
    """``BOQ question BOR rationale BOA answer EOS`` with role spans."""
    if ex.answer is None or ex.rationale is None:
        raise ContractViolation(f"{ex.id} needs both rationale and answer")
    return serialize_text(vocab, ex.prompt_text, ex.rationale, ex.answer, context_length)


def deserialize(seq: TokenSequence, vocab: Vocab) -> tuple[str, str, str]:
    """Recover (question, rationale, answer) text from role spans."""
    return tuple(vocab.decode(seq.ids[a:b]) for a, b in
                 (seq.span("question"), seq.span("rationale"), seq.span("answer")))


def loss_weights(batch: Sequence[TokenSequence], T: int, loss_span: str) -> np.ndarray:
    """Per-target weights for the negative mean-over-examples log-likelihood.

    Column ``t`` weighs the prediction of token ``t + 1``. The
    rationale-and-answer span runs from the first rationale token to the end
    of the sequence (so BOA, the answer and EOS are all targets); the
    rationale-only span is exactly the rationale tokens.
    """
    w = np.zeros((len(batch), T - 1))
    for i, seq in enumerate(batch):
        r0, r1 = seq.span("rationale")
        end = len(seq) if loss_span == "rationale-and-answer" else r1
        if end > r0:
            w[i, r0 - 1: end - 1] = -1.0 / len(batch)
    return w


class SftLoss:
    """Mean over the batch of the summed negative log-likelihood of the span."""

    def __init__(self, model: TinyLM, batch: Sequence[TokenSequence], loss_span: str,
                 pad_id: int = 0):
        if not batch:
            raise ContractViolation("batch must be nonempty")
        if any(len(s) > model.arch.context_length for s in batch):
            raise ContractViolation("sequence exceeds context length")
        self.model = model
        self.ids = pad_batch([s.ids for s in batch], pad_id)
        self.weights = loss_weights(batch, self.ids.shape[1], loss_span)

    def value(self, params: np.ndarray) -> float:
        return self.model.weighted_logprob(params, self.ids, self.weights, need_grad=False)[0]

    def value_and_grad(self, params: np.ndarray):
        return self.model.weighted_logprob(params, self.ids, self.weights)


def sft_loss(snapshot: PolicySnapshot, batch: Sequence[TokenSequence], cfg: SftConfig) -> float:
    return SftLoss(snapshot.model, batch, cfg.loss_span).value(snapshot.params)


def encode_training_set(examples: Dataset | Sequence[Example], vocab: Vocab,
                        context_length: int) -> tuple[list[TokenSequence], int]:
    seqs, skipped = [], 0
    for ex in examples:
        try:
            seqs.append(serialize_example(ex, vocab, context_length))
        except ExampleTooLongError:
            skipped += 1
    if skipped:
        log.warning("skipped %d examples longer than the context window", skipped)
    return seqs, skipped


def mean_loss(snapshot: PolicySnapshot, seqs: Sequence[TokenSequence], loss_span: str,
              chunk: int = 256) -> float:
    """Per-example mean span loss over a whole set."""
    total = 0.0
    for i in range(0, len(seqs), chunk):
        part = seqs[i: i + chunk]
        total += SftLoss(snapshot.model, part, loss_span).value(snapshot.params) * len(part)
    return total / len(seqs)


def sft_train(base: PolicySnapshot, seed_data: Dataset | Sequence[Example], cfg: SftConfig,
              seed: int, vocab: Vocab, history: list | None = None) -> PolicySnapshot:
    """Mini-batch descent on the span loss; returns a child of ``base``.

    ``history`` (if given) receives one ``{"epoch", "mean_loss", "skipped"}``
    record per epoch, where ``mean_loss`` averages the batch losses seen
    during that epoch.
    """
    base.check_vocab(vocab)
    seqs, skipped = encode_training_set(seed_data, vocab, base.arch.context_length)
    if not seqs:
        raise EmptyTrainingSetError("no seed example fits the context window")
    params = np.array(base.params)
    opt = make_optimizer(cfg.optimizer, params.size, cfg.lr)
    model = base.model
    for epoch in range(1, cfg.epochs + 1):
        order = rng(seed, "sft", epoch).permutation(len(seqs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [seqs[i] for i in order[start: start + cfg.batch_size]]
            value, grad = SftLoss(model, batch, cfg.loss_span).value_and_grad(params)
            model.check_finite(grad)
            params = opt.step(params, grad)
            losses.append(value)
        rec = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "skipped": skipped}
        log.info("sft epoch %d mean loss %.4f", epoch, rec["mean_loss"])
        if history is not None:
            history.append(rec)
    return derive(base, params, tag="sft")
