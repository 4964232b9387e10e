"""Weak-to-strong self-reinforcement for tiny character-level language models."""

from .checkpoint import load_snapshot, save_snapshot
from .corpus import Dataset, Example, TaskSpec, emit_jsonl, gen_benchmark, gen_synthetic, ingest_jsonl
from .errors import WeakforgeError
from .model import ArchConfig, DecodeConfig, PolicySnapshot, init_snapshot, sample, sequence_logprob
from .pairforge import ResponsePair, Verdict, filter_pairs, generate_pair, judge
from .pipeline import RunConfig, desk_config, evaluate, execute, run_pipeline
from .prefopt import PrefConfig, dpo_pair_loss, dpo_train, iter_loss, pref_score, ranking_loss_literal
from .sft import SftConfig, sft_loss, sft_train
from .vocab import Vocab

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "Dataset", "DecodeConfig", "Example", "PolicySnapshot", "PrefConfig",
    "ResponsePair", "RunConfig", "SftConfig", "TaskSpec", "Verdict", "Vocab", "WeakforgeError",
    "desk_config", "dpo_pair_loss", "dpo_train", "emit_jsonl", "evaluate", "execute",
    "filter_pairs", "gen_benchmark", "gen_synthetic", "generate_pair", "ingest_jsonl",
    "init_snapshot", "iter_loss", "judge", "load_snapshot", "pref_score", "ranking_loss_literal",
    "run_pipeline", "sample", "save_snapshot", "sequence_logprob", "sft_loss", "sft_train",
]
