"""Finite-difference sweep over every trainable loss on random tiny models."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .gradcheck import check_gradient
from .model import ArchConfig, PolicySnapshot, batch_sequence_logprob, get_model
from .prefopt import DpoLoss, PrefConfig
from .rng import Xoshiro256, rng
from .sft import SftLoss
from .vocab import TokenSequence, Vocab

LOSS_KINDS = ("sft/rationale-and-answer", "sft/rationale-only",
              "dpo/logsigmoid", "dpo/hinge-margin", "dpo/paper-literal")
# pair gaps closer than this to a kink are redrawn
KINK_CLEARANCE = 1e-3

_VOCAB = Vocab(symbols="0123456789+-*=?<>,ab")


@dataclass
class SuiteCase:
    index: int
    kind: str
    arch: ArchConfig
    n_coords: int
    max_rel_error: float
    worst_block: str
    raw_max_rel_error: float = 0.0

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _random_arch(g: Xoshiro256) -> ArchConfig:
    n_head = g.choice([1, 2])
    return ArchConfig(d_model=n_head * g.choice([2, 4]), context_length=16,
                      n_layer=g.choice([1, 2]), n_head=n_head, ff_mult=g.choice([1, 2]))


def _random_seq(g: Xoshiro256, vocab: Vocab) -> TokenSequence:
    content = list(range(len(vocab.specials), vocab.size))
    q = [g.choice(content) for _ in range(g.integers(1, 3))]
    r = [g.choice(content) for _ in range(g.integers(0, 3))]
    a = [g.choice(content) for _ in range(g.integers(1, 2))]
    ids = [vocab.boq] + q + [vocab.bor] + r + [vocab.boa] + a + [vocab.eos]
    r0 = len(q) + 2
    a0 = r0 + len(r) + 1
    return TokenSequence(ids, {"question": (1, 1 + len(q)), "rationale": (r0, r0 + len(r)),
                               "answer": (a0, a0 + len(a))})


def _sample_coords(model, g: Xoshiro256, per_block: int) -> list[int]:
    coords = []
    for s, _ in model.layout.values():
        idx = list(range(s.start, s.stop))
        g.shuffle(idx)
        coords += sorted(idx[:per_block])
    return coords


def _dpo_spec(snap: PolicySnapshot, ref: PolicySnapshot, g: Xoshiro256, mode: str):
    """A 2-pair DPO batch whose gaps sit clear of the mode's kink."""
    cfg = PrefConfig(beta=g.choice([0.05, 0.1, 0.5, 1.0]), loss_mode=mode,
                     margin=g.choice([0.0, 0.5, 1.0]))
    kink = {"logsigmoid": None, "hinge-margin": cfg.margin, "paper-literal": 0.0}[mode]
    for _ in range(100):
        seqs = [_random_seq(g, _VOCAB) for _ in range(4)]
        prompts = [list(s.ids[: s.span("rationale")[0]]) for s in seqs[:2]]
        strong = [list(s.ids[s.span("rationale")[0]:]) for s in seqs[:2]]
        weak = [list(s.ids[s.span("rationale")[0]:]) for s in seqs[2:]]
        rs = batch_sequence_logprob(ref, prompts, strong)
        rw = batch_sequence_logprob(ref, prompts, weak)
        spec = DpoLoss(snap.model, prompts, strong, weak, rs, rw, cfg)
        s, w = spec.scores(np.array(snap.params))
        if kink is None or np.all(np.abs((s - w) - kink) > KINK_CLEARANCE):
            return spec
    raise RuntimeError("could not draw an off-kink preference batch")


def run_suite(n_snapshots: int = 100, seed: int = 0, per_block: int = 2, full_every: int = 25,
              h: float = 1e-5) -> list[SuiteCase]:
    """Check each loss kind in turn on ``n_snapshots`` random tiny snapshots.

    Every case compares ``per_block`` random coordinates from each parameter
    block; every ``full_every``-th case compares all coordinates.
    """
    cases = []
    for k in range(n_snapshots):
        g = rng(seed, "gradsuite", k)
        arch = _random_arch(g)
        model = get_model(arch, _VOCAB.size)
        scale = g.choice([0.1, 0.5, 1.0])
        theta = g.normals(model.n_params) * scale
        snap = PolicySnapshot.create(arch, _VOCAB, theta, tag=f"suite{k}")
        kind = LOSS_KINDS[k % len(LOSS_KINDS)]
        family, mode = kind.split("/")
        if family == "sft":
            spec = SftLoss(model, [_random_seq(g, _VOCAB) for _ in range(2)], mode)
        else:
            ref = PolicySnapshot.create(arch, _VOCAB, g.normals(model.n_params) * scale, tag="ref")
            spec = _dpo_spec(snap, ref, g, mode)
        coords = None if full_every and k % full_every == 0 else _sample_coords(model, g, per_block)
        res = check_gradient(spec, np.array(theta), h, coords)
        cases.append(SuiteCase(k, kind, arch, res.n_coords, res.max_rel_error,
                               model.block_of(res.worst_coord), res.raw_max_rel_error))
    return cases


def summarize(cases: list[SuiteCase], tol: float = 1e-4, seconds: float | None = None) -> dict:
    worst = max(cases, key=lambda c: c.max_rel_error)
    by_kind = {}
    for c in cases:
        d = by_kind.setdefault(c.kind, {"cases": 0, "max_rel_error": 0.0, "raw_max_rel_error": 0.0})
        d["cases"] += 1
        d["max_rel_error"] = max(d["max_rel_error"], c.max_rel_error)
        d["raw_max_rel_error"] = max(d["raw_max_rel_error"], c.raw_max_rel_error)
    out = {"cases": len(cases), "passed": sum(c.ok(tol) for c in cases), "tolerance": tol,
           "max_rel_error": worst.max_rel_error, "worst": f"{worst.kind} #{worst.index} {worst.worst_block}",
           "by_kind": by_kind}
    if seconds is not None:
        out["seconds"] = seconds
    return out


def timed_suite(**kw) -> tuple[list[SuiteCase], float]:
    t0 = time.perf_counter()
    cases = run_suite(**kw)
    return cases, time.perf_counter() - t0
