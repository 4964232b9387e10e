"""Strong/weak response pairs on unlabeled questions, judging and filtering."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Example
from .errors import ContractViolation
from .model import DecodeConfig, PolicySnapshot, sample_many
from .rng import derive_seed
from .sft import prompt_ids
from .vocab import Vocab

JUDGE_KINDS = ("self-prompt", "rule-based")
STRONG, NOT_STRONG = "strong", "not-strong"

JUDGE_TEMPLATE = (
    "Question: {question}\n"
    "Response1: {response1}\n"
    "Response2: {response2}\n"
    "A good Response is:\n"
    "1. relevant to the Question\n"
    "2. seemingly correct and coherent\n"
    "3. do not output repeated or nonsense words.\n"
    "4. provide some rationales, explanations or answer\n"
    'Do you think Response1 is better than Response2? Only answer "yes" or "no":'
)

MAX_TRIGRAM_REPEATS = 3
JUDGE_DECODE_TOKENS = 4


@dataclass(frozen=True)
class ResponsePair:
    question: Example
    r1: str
    y1: str
    r0: str
    y0: str
    strong_id: str
    weak_id: str
    strong_seed: int = 0
    weak_seed: int = 0
    # raw continuation ids; preference scoring uses these verbatim
    strong_ids: tuple[int, ...] = field(default=(), repr=False)
    weak_ids: tuple[int, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.strong_id == self.weak_id:
            raise ContractViolation("strong and weak snapshots must differ")


@dataclass(frozen=True)
class Verdict:
    preferred: str
    judge_kind: str
    raw: str = ""

    @property
    def is_strong(self) -> bool:
        return self.preferred == STRONG


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[ResponsePair, ...]
    verdicts: tuple[Verdict, ...]
    accepted_idx: tuple[int, ...]

    @property
    def accepted(self) -> list[ResponsePair]:
        return [self.pairs[i] for i in self.accepted_idx]

    @property
    def rejected(self) -> list[ResponsePair]:
        keep = set(self.accepted_idx)
        return [p for i, p in enumerate(self.pairs) if i not in keep]

    @property
    def counts(self) -> dict:
        n_acc = len(self.accepted_idx)
        return {"generated": len(self.pairs), "accepted": n_acc, "rejected": len(self.pairs) - n_acc}


def split_response(ids: Sequence[int], vocab: Vocab) -> tuple[str, str]:
    """Cut a decoded continuation at its first BOA into (rationale, answer).

    A trailing EOS is dropped. Without BOA the whole continuation is the
    rationale and the answer is empty.
    """
    ids = list(ids)
    if ids and ids[-1] == vocab.eos:
        ids = ids[:-1]
    if vocab.boa in ids:
        k = ids.index(vocab.boa)
        return vocab.decode(ids[:k]), vocab.decode(ids[k + 1:])
    return vocab.decode(ids), ""


def _pair_seeds(cfg: DecodeConfig) -> tuple[int, int]:
    return derive_seed(cfg.seed, "strong"), derive_seed(cfg.seed, "weak")


def generate_pairs(strong: PolicySnapshot, weak: PolicySnapshot, questions: Sequence[Example],
                   cfgs: Sequence[DecodeConfig], vocab: Vocab) -> list[ResponsePair]:
    """Batched :func:`generate_pair`; element ``i`` uses ``cfgs[i]``."""
    if strong.version_id == weak.version_id:
        raise ContractViolation("strong and weak snapshots must differ")
    for q in questions:
        if q.split != "unlabeled":
            raise ContractViolation(f"{q.id} is not an unlabeled question")
    prompts = [prompt_ids(vocab, q.prompt_text) for q in questions]
    seeds = [_pair_seeds(c) for c in cfgs]
    s_out = sample_many(strong, prompts, [c.with_seed(s) for c, (s, _) in zip(cfgs, seeds)], vocab.eos)
    w_out = sample_many(weak, prompts, [c.with_seed(w) for c, (_, w) in zip(cfgs, seeds)], vocab.eos)
    pairs = []
    for q, (ss, ws), so, wo in zip(questions, seeds, s_out, w_out):
        r1, y1 = split_response(so, vocab)
        r0, y0 = split_response(wo, vocab)
        pairs.append(ResponsePair(q, r1, y1, r0, y0, strong.version_id, weak.version_id,
                                  ss, ws, tuple(so), tuple(wo)))
    return pairs


def generate_pair(strong: PolicySnapshot, weak: PolicySnapshot, q: Example, cfg: DecodeConfig,
                  vocab: Vocab) -> ResponsePair:
    """Decode one response from each policy off ``BOQ question BOR``."""
    return generate_pairs(strong, weak, [q], [cfg], vocab)[0]


def _response_text(rationale: str, answer: str) -> str:
    return " ".join(p for p in (rationale, answer) if p)


def render_judge_prompt(pair: ResponsePair) -> str:
    return JUDGE_TEMPLATE.format(
        question=pair.question.prompt_text,
        response1=_response_text(pair.r1, pair.y1),
        response2=_response_text(pair.r0, pair.y0),
    )


def max_trigram_count(text: str) -> int:
    """Largest occurrence count of any character 3-gram (overlapping)."""
    grams = Counter(text[i: i + 3] for i in range(len(text) - 2))
    return max(grams.values(), default=0)


def overlap_ratio(text: str, question: str) -> float:
    """Share of ``text``'s characters (with multiplicity) that occur in ``question``."""
    if not text:
        return 0.0
    qs = set(question)
    return sum(ch in qs for ch in text) / len(text)


def rule_checks(pair: ResponsePair) -> dict[str, bool]:
    q = pair.question.prompt_text
    return {
        "a": bool(pair.r1.strip()) and (pair.r1, pair.y1) != (pair.r0, pair.y0),
        "b": max_trigram_count(pair.r1) <= MAX_TRIGRAM_REPEATS,
        "c": bool(pair.y1.strip()),
        # ties pass
        "d": overlap_ratio(pair.r1, q) >= overlap_ratio(pair.r0, q),
    }


def self_prompt_ids(pair: ResponsePair, vocab: Vocab, context_length: int) -> list[int]:
    """Encoded judge prompt, left-truncated to leave room for the reply."""
    text = render_judge_prompt(pair).replace("\n", " ")
    ids = vocab.encode(text, unknown="?")
    keep = max(1, context_length - JUDGE_DECODE_TOKENS)
    return ids[-keep:]


def judge_many(pairs: Sequence[ResponsePair], mode: str, judge_snapshot: PolicySnapshot | None = None,
               vocab: Vocab | None = None) -> list[Verdict]:
    if mode not in JUDGE_KINDS:
        raise ContractViolation(f"unknown judge mode {mode!r}")
    if mode == "rule-based":
        out = []
        for p in pairs:
            checks = rule_checks(p)
            raw = " ".join(f"{k}={int(v)}" for k, v in checks.items())
            out.append(Verdict(STRONG if all(checks.values()) else NOT_STRONG, mode, raw))
        return out
    if judge_snapshot is None or vocab is None:
        raise ContractViolation("self-prompt judging needs a judge snapshot and its vocab")
    judge_snapshot.check_vocab(vocab)
    prompts = [self_prompt_ids(p, vocab, judge_snapshot.arch.context_length) for p in pairs]
    cfg = DecodeConfig(temperature=0.0, max_new_tokens=JUDGE_DECODE_TOKENS)
    outs = sample_many(judge_snapshot, prompts, [cfg] * len(prompts), vocab.eos)
    verdicts = []
    for o in outs:
        text = vocab.decode(o)
        ok = text.strip().lower().startswith("yes")
        verdicts.append(Verdict(STRONG if ok else NOT_STRONG, mode, text))
    return verdicts


def judge(pair: ResponsePair, mode: str, judge_snapshot: PolicySnapshot | None = None,
          vocab: Vocab | None = None) -> Verdict:
    """Self-prompt: greedy reply to the judge prompt must start with "yes".
    Rule-based: rules (a)-(d) in :func:`rule_checks` must all hold."""
    return judge_many([pair], mode, judge_snapshot, vocab)[0]


def filter_pairs(pairs: Sequence[ResponsePair], verdicts: Sequence[Verdict]) -> PairSet:
    if len(pairs) != len(verdicts):
        raise ContractViolation(f"{len(pairs)} pairs but {len(verdicts)} verdicts")
    idx = tuple(i for i, v in enumerate(verdicts) if v.is_strong)
    return PairSet(tuple(pairs), tuple(verdicts), idx)


def accept_all(pairs: Sequence[ResponsePair], verdicts: Sequence[Verdict] | None = None) -> PairSet:
    """Filtering switched off: every generated pair is kept."""
    if verdicts is None:
        verdicts = [Verdict(STRONG, "rule-based", "unfiltered")] * len(pairs)
    return PairSet(tuple(pairs), tuple(verdicts), tuple(range(len(pairs))))


def pairset_records(ps: PairSet) -> list[dict]:
    return [{
        "qid": p.question.id, "r1": p.r1, "y1": p.y1, "r0": p.r0, "y0": p.y0,
        "verdict": v.preferred, "judge_kind": v.judge_kind, "raw_judge_output": v.raw,
    } for p, v in zip(ps.pairs, ps.verdicts)]


def save_pairset(ps: PairSet, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in pairset_records(ps):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path
