"""End-to-end self-reinforcement runs: SFT, then judged preference rounds.

Snapshot numbering: ``pi_0`` is the (pretrained) base, ``pi_1`` the SFT
model, and round ``t`` (t >= 2) trains ``pi_t`` from pairs where ``pi_{t-1}``
plays strong and ``pi_{t-2}`` weak.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import save_snapshot
from .corpus import Dataset, Example, gen_benchmark, ingest_jsonl, split_seed_unlabeled, verify_answer
from .errors import ContractViolation, EmptyPreferenceSetError, ValidationError
from .model import ArchConfig, DecodeConfig, PolicySnapshot, derive, init_snapshot, pad_batch, sample_many
from .optim import make_optimizer
from .pairforge import accept_all, filter_pairs, generate_pairs, judge_many, save_pairset
from .prefopt import PrefConfig, dpo_train
from .rng import Xoshiro256, derive_seed, rng
from .sft import SftConfig, prompt_ids, sft_train
from .vocab import Vocab

log = logging.getLogger(__name__)

REFERENCE_MODES = ("init", "base")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 20240501
    arch: ArchConfig = field(default_factory=ArchConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    pref: PrefConfig = field(default_factory=PrefConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    n_seed: int = 6400
    n_unlabeled: int = 6400
    n_test: int = 2618
    iterations: int = 2
    filtering: bool = True
    judge_mode: str = "rule-based"
    reference: str = "init"
    dataset: str = "synthetic"
    pretrain_steps: int = 0
    pretrain_lr: float = 3e-3
    pretrain_batch: int = 32
    pretrain_examples: int = 2000
    eval_max_new_tokens: int = 48
    # share of each round's preference set drawn from seed data; reserved
    human_mix_ratio: float = 0.0
    output_dir: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractViolation("iterations must be at least 1")
        if min(self.n_seed, self.n_unlabeled) < 1 or self.n_test < 0:
            raise ContractViolation("seed and unlabeled counts must be positive")
        if self.judge_mode not in ("rule-based", "self-prompt"):
            raise ContractViolation(f"unknown judge mode {self.judge_mode!r}")
        if self.reference not in REFERENCE_MODES:
            raise ContractViolation(f"unknown reference mode {self.reference!r}")
        if self.human_mix_ratio != 0.0:
            raise ContractViolation("human_mix_ratio is reserved and must stay 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        nested = {"arch": ArchConfig, "sft": SftConfig, "pref": PrefConfig, "decode": DecodeConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def desk_config(**overrides) -> RunConfig:
    """The shipped laptop-scale configuration (256 seed / 256 unlabeled per round)."""
    cfg = RunConfig(
        seed=20240501,
        arch=ArchConfig(d_model=32, context_length=64, n_layer=1, n_head=2),
        sft=SftConfig(lr=3e-3, batch_size=16, epochs=3, optimizer="adam"),
        pref=PrefConfig(beta=0.1, lr=1e-4, batch_size=16, epochs=3, optimizer="adam"),
        decode=DecodeConfig(temperature=0.7, top_k=None, max_new_tokens=48),
        n_seed=256,
        n_unlabeled=256,
        n_test=500,
        iterations=2,
        pretrain_steps=300,
        pretrain_examples=2000,
    )
    return cfg.replace(**overrides) if overrides else cfg


# -- base model --------------------------------------------------------------


def pretrain_corpus(n: int, seed: int, vocab: Vocab) -> list[list[int]]:
    """Plain-text task transcripts (no special tokens) for base pretraining."""
    ds = gen_benchmark(n, derive_seed(seed, "pretrain-data"))
    return [vocab.encode(f"{ex.prompt_text} {ex.rationale} {ex.answer}") for ex in ds]


def pretrain_base(init: PolicySnapshot, corpus: Sequence[Sequence[int]], steps: int, lr: float,
                  batch_size: int, seed: int, history: list | None = None) -> PolicySnapshot:
    """Next-token training on unstructured text with Adam."""
    if steps <= 0:
        return init
    model = init.model
    C = init.arch.context_length
    seqs = [list(s)[:C] for s in corpus if len(s) >= 2]
    params = np.array(init.params)
    opt = make_optimizer("adam", params.size, lr)
    g = rng(seed, "pretrain")
    for step in range(1, steps + 1):
        batch = [seqs[g.below(len(seqs))] for _ in range(batch_size)]
        ids = pad_batch(batch)
        w = np.zeros((len(batch), ids.shape[1] - 1))
        for i, s in enumerate(batch):
            w[i, : len(s) - 1] = -1.0 / len(batch)
        value, grad = model.weighted_logprob(params, ids, w)
        params = opt.step(params, grad)
        if history is not None and (step % 50 == 0 or step == steps):
            history.append({"step": step, "loss": value})
    return derive(init, params, tag="pretrain")


class UnlabeledSampler:
    """Fresh questions per round: without replacement until the pool runs out,
    then with replacement."""

    def __init__(self, pool: Dataset, seed: int):
        if not len(pool):
            raise ContractViolation("unlabeled pool is empty")
        self.pool = pool.examples
        self.gen = rng(seed, "unlabeled")
        self.order = self.gen.permutation(len(self.pool))
        self.pos = 0
        self.replacement_draws = 0

    def draw(self, n: int) -> list[Example]:
        out = []
        while len(out) < n and self.pos < len(self.order):
            out.append(self.pool[self.order[self.pos]])
            self.pos += 1
        if len(out) < n:
            log.warning("unlabeled pool exhausted; drawing %d with replacement", n - len(out))
        while len(out) < n:
            out.append(self.pool[self.gen.below(len(self.pool))])
            self.replacement_draws += 1
        return out


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalResult:
    n: int
    correct: int
    accuracy: float
    per_category: dict
    outcomes: list[bool] = field(default_factory=list, repr=False)
    predictions: list[str] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"n": self.n, "correct": self.correct, "accuracy": self.accuracy,
                "per_category": self.per_category}


def grade(testset: Sequence[Example], predictions: Sequence[str]) -> EvalResult:
    if not len(testset):
        raise ContractViolation("test set is empty")
    outcomes = [verify_answer(ex, p) for ex, p in zip(testset, predictions)]
    per: dict[str, dict] = {}
    for ex, ok in zip(testset, outcomes):
        c = per.setdefault(ex.category, {"n": 0, "correct": 0})
        c["n"] += 1
        c["correct"] += int(ok)
    for c in per.values():
        c["accuracy"] = c["correct"] / c["n"]
    correct = sum(outcomes)
    return EvalResult(len(outcomes), correct, correct / len(outcomes), dict(sorted(per.items())),
                      outcomes, list(predictions))


def predict(snapshot: PolicySnapshot, questions: Sequence[Example], vocab: Vocab,
            max_new_tokens: int = 48, chunk: int = 512) -> list[str]:
    """Greedy continuations as text (specials rendered as ``<NAME>``)."""
    cfg = DecodeConfig(temperature=0.0, max_new_tokens=max_new_tokens)
    prompts = [prompt_ids(vocab, q.prompt_text) for q in questions]
    outs = []
    for i in range(0, len(prompts), chunk):
        part = prompts[i: i + chunk]
        outs += sample_many(snapshot, part, [cfg] * len(part), vocab.eos)
    return [vocab.decode(o) for o in outs]


def evaluate(snapshot: PolicySnapshot, testset: Dataset | Sequence[Example], vocab: Vocab,
             cfg: DecodeConfig | None = None) -> EvalResult:
    """Greedy-decode each test question and grade it with ``verify_answer``."""
    exs = list(testset)
    if not exs:
        raise ContractViolation("test set is empty")
    snapshot.check_vocab(vocab)
    max_new = cfg.max_new_tokens if cfg is not None else 48
    return grade(exs, predict(snapshot, exs, vocab, max_new))


@dataclass(frozen=True)
class Bucket:
    lo: float
    hi: float
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0


def bucketize(difficulties: Sequence[float], outcomes: Sequence[bool], buckets: int) -> list[Bucket]:
    """Equal-count buckets over examples sorted by difficulty (stable).

    The remainder ``n % buckets`` goes one extra item each to the earliest
    buckets; empty buckets are dropped when ``buckets > n``.
    """
    if buckets < 1:
        raise ContractViolation("need at least one bucket")
    n = len(difficulties)
    order = sorted(range(n), key=lambda i: difficulties[i])
    base, extra = divmod(n, buckets)
    out, pos = [], 0
    for b in range(buckets):
        size = base + (1 if b < extra else 0)
        if size == 0:
            continue
        idx = order[pos: pos + size]
        pos += size
        ds = [difficulties[i] for i in idx]
        out.append(Bucket(min(ds), max(ds), size, sum(bool(outcomes[i]) for i in idx)))
    return out


def difficulty_report(snapshot: PolicySnapshot, testset: Dataset | Sequence[Example], buckets: int,
                      vocab: Vocab, cfg: DecodeConfig | None = None,
                      result: EvalResult | None = None) -> list[Bucket]:
    """Accuracy per equal-count difficulty bucket.

    Pass an existing ``result`` for the same test set to skip decoding.
    """
    exs = list(testset)
    missing = [ex.id for ex in exs if ex.difficulty is None]
    if missing:
        raise ValidationError("examples without difficulty: " + ", ".join(missing))
    if result is None:
        result = evaluate(snapshot, exs, vocab, cfg)
    return bucketize([ex.difficulty for ex in exs], result.outcomes, buckets)


def write_report_csv(rows: Sequence[Bucket], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "difficulty_min", "difficulty_max", "count", "correct", "accuracy"])
        for i, b in enumerate(rows):
            w.writerow([i, f"{b.lo:.6g}", f"{b.hi:.6g}", b.count, b.correct, f"{b.accuracy:.6f}"])
    return path


# -- the run -----------------------------------------------------------------


@dataclass
class IterationRecord:
    t: int
    phase: str
    output_id: str
    strong_id: str | None = None
    weak_id: str | None = None
    reference_id: str | None = None
    generated: int = 0
    accepted: int = 0
    rejected: int = 0
    eval: dict | None = None
    status: str = "ok"
    wall_time: float = 0.0

    @property
    def accuracy(self) -> float | None:
        return self.eval["accuracy"] if self.eval else None

    def metrics(self) -> dict:
        """Deterministic part of the record (everything but wall time)."""
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class PipelineResult:
    records: list[IterationRecord]
    snapshots: list[PolicySnapshot]
    pairsets: dict
    test: Dataset
    logs: dict

    @property
    def aborted(self) -> bool:
        return any(r.status == "aborted" for r in self.records)

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.records if r.accuracy is not None]


def build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        n = cfg.n_seed + cfg.n_unlabeled * cfg.iterations + cfg.n_test
        return gen_benchmark(n, derive_seed(cfg.seed, "data"))
    return ingest_jsonl(cfg.dataset)


def make_splits(cfg: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    """(seed, unlabeled pool, test) for a run; the pool covers every round."""
    ds = build_dataset(cfg)
    n_pool = min(cfg.n_unlabeled * cfg.iterations, len(ds) - cfg.n_seed)
    seed_ds, pool, test = split_seed_unlabeled(ds, cfg.n_seed, n_pool, cfg.seed)
    if not len(test):
        raise ContractViolation("no examples left for the test split")
    return seed_ds, pool, test


def build_base(cfg: RunConfig, vocab: Vocab, history: list | None = None) -> PolicySnapshot:
    """pi_0: a seeded init, optionally pretrained on plain transcripts."""
    base = init_snapshot(cfg.arch, vocab, rng(cfg.seed, "init"))
    return pretrain_base(base, pretrain_corpus(cfg.pretrain_examples, cfg.seed, vocab),
                         cfg.pretrain_steps, cfg.pretrain_lr, cfg.pretrain_batch, cfg.seed, history)


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def execute(cfg: RunConfig, vocab: Vocab | None = None) -> PipelineResult:
    """Run the whole pipeline and return every artifact in memory.

    If ``cfg.output_dir`` is set, checkpoints, metrics, pair files and
    training logs are written there as the run progresses.
    """
    vocab = vocab or Vocab()
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    seed_ds, pool, test = make_splits(cfg)
    sampler = UnlabeledSampler(pool, cfg.seed)
    eval_cfg = DecodeConfig(temperature=0.0, max_new_tokens=cfg.eval_max_new_tokens)
    logs: dict[str, list] = {}
    records: list[IterationRecord] = []
    snaps: list[PolicySnapshot] = []
    pairsets: dict = {}

    def finish(rec: IterationRecord, snap: PolicySnapshot | None, started: float) -> None:
        if snap is not None:
            rec.eval = evaluate(snap, test, vocab, eval_cfg).to_dict()
            if out:
                save_snapshot(snap, out / "checkpoints" / f"pi{rec.t}.wkfg")
        rec.wall_time = time.perf_counter() - started
        records.append(rec)
        log.info("pi_%d (%s): %s", rec.t, rec.phase, rec.eval and rec.eval["accuracy"])
        if out:
            _write_jsonl(out / "metrics.jsonl", [r.metrics() for r in records])
            _write_jsonl(out / "timings.jsonl", [{"t": r.t, "wall_time": r.wall_time} for r in records])

    started = time.perf_counter()
    logs["pretrain"] = []
    base = build_base(cfg, vocab, logs["pretrain"])
    snaps.append(base)
    finish(IterationRecord(0, "base", base.version_id), base, started)

    started = time.perf_counter()
    logs["sft"] = []
    pi1 = sft_train(base, seed_ds, cfg.sft, derive_seed(cfg.seed, "sft"), vocab, logs["sft"])
    snaps.append(pi1)
    finish(IterationRecord(1, "sft", pi1.version_id, weak_id=base.version_id), pi1, started)

    for t in range(2, cfg.iterations + 2):
        started = time.perf_counter()
        strong, weak = snaps[t - 1], snaps[t - 2]
        reference = strong if cfg.reference == "init" else snaps[0]
        questions = sampler.draw(cfg.n_unlabeled)
        dcfgs = [cfg.decode.with_seed(derive_seed(cfg.seed, "pairs", t, i)) for i in range(len(questions))]
        pairs = generate_pairs(strong, weak, questions, dcfgs, vocab)
        verdicts = judge_many(pairs, cfg.judge_mode, strong, vocab)
        ps = filter_pairs(pairs, verdicts) if cfg.filtering else accept_all(pairs, verdicts)
        pairsets[t] = ps
        if out:
            save_pairset(ps, out / "pairs" / f"round{t}.jsonl")
        counts = ps.counts
        rec = IterationRecord(t, "self-reinforce", "", strong.version_id, weak.version_id,
                              reference.version_id, counts["generated"], counts["accepted"],
                              counts["rejected"])
        logs[f"dpo{t}"] = []
        try:
            new = dpo_train(strong, reference, ps, cfg.pref, derive_seed(cfg.seed, "dpo", t), vocab,
                            logs[f"dpo{t}"])
        except EmptyPreferenceSetError:
            rec.status = "aborted"
            finish(rec, None, started)
            log.error("round %d produced no accepted pairs; stopping", t)
            break
        rec.output_id = new.version_id
        snaps.append(new)
        finish(rec, new, started)

    if out:
        for name, rows in logs.items():
            _write_jsonl(out / "logs" / f"{name}.jsonl", rows)
    return PipelineResult(records, snaps, pairsets, test, logs)


def run_pipeline(cfg: RunConfig, vocab: Vocab | None = None) -> list[IterationRecord]:
    return execute(cfg, vocab).records
