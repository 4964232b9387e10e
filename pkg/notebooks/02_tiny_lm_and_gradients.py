# %% [markdown]
# # Tiny transformer and its gradients
#
# The policy is a pre-norm transformer in plain numpy with hand-written
# backprop. Every trainable loss is checked against central differences.

# %%
import numpy as np

from weakforge import gradsuite
from weakforge.gradcheck import check_gradient
from weakforge.model import ArchConfig, DecodeConfig, init_snapshot, sample, sequence_logprob
from weakforge.rng import rng
from weakforge.sft import SftLoss, prompt_ids, serialize_example
from weakforge.corpus import gen_benchmark
from weakforge.vocab import Vocab

v = Vocab()
arch = ArchConfig(d_model=8, context_length=64, n_layer=1, n_head=2)
snap = init_snapshot(arch, v, rng(0, "demo"), scale=0.3)
print(snap.version_id, snap.model.n_params, "parameters")

# %% [markdown]
# Sampling is fully determined by the snapshot, prompt and decode config.

# %%
p = prompt_ids(v, "(3+4)*2=?")
cfg = DecodeConfig(temperature=1.0, max_new_tokens=12, seed=42)
print(sample(snap, p, cfg, v) == sample(snap, p, cfg, v))
print(sequence_logprob(snap, p, v.encode("3+4=7")))

# %% [markdown]
# One finite-difference check by hand, then the full randomized suite.

# %%
spec = SftLoss(snap.model, [serialize_example(ex, v) for ex in gen_benchmark(2, 3)], "rationale-and-answer")
print(check_gradient(spec, np.array(snap.params), coords=range(0, snap.model.n_params, 97)))

# %%
cases, seconds = gradsuite.timed_suite(n_snapshots=100)
summary = gradsuite.summarize(cases, 1e-4, seconds)
print(summary["passed"], "/", summary["cases"], f"{seconds:.1f}s")
for kind, row in summary["by_kind"].items():
    print(f"  {kind:26s} {row['max_rel_error']:.2e}")
