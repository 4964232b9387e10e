# %% [markdown]
# # Supervised fine-tuning on seed data
#
# Examples are laid out as `BOQ question BOR rationale BOA answer EOS`. The
# loss covers the rationale and answer tokens by default. A rationale-only
# span is available as well.

# %%
from weakforge.corpus import gen_benchmark
from weakforge.model import ArchConfig, init_snapshot
from weakforge.pipeline import evaluate
from weakforge.rng import rng
from weakforge.sft import SftConfig, encode_training_set, mean_loss, serialize_example, sft_train
from weakforge.vocab import Vocab

v = Vocab()
seed_data, test = gen_benchmark(256, 1), gen_benchmark(200, 2)
seq = serialize_example(seed_data[0], v)
print(seq.ids, seq.spans)

# %%
base = init_snapshot(ArchConfig(d_model=32, context_length=64), v, rng(5, "init"))
history = []
pi1 = sft_train(base, seed_data, SftConfig(lr=3e-3, epochs=4, optimizer="adam"), 5, v, history)
for h in history:
    print(h)

# %%
seqs, _ = encode_training_set(seed_data, v, 64)
print("loss before", mean_loss(base, seqs, "rationale-and-answer"), "after", mean_loss(pi1, seqs, "rationale-and-answer"))
print("test accuracy", evaluate(pi1, test, v).accuracy)
