# %% [markdown]
# # Synthetic reasoning corpus
#
# Five task families stand in for the benchmark's categories. Every item has
# a checkable gold answer and a templated rationale, so a tiny model can be
# trained and graded without any human labels.

# %%
from weakforge.corpus import TaskSpec, gen_benchmark, gen_synthetic, verify_answer
from weakforge.vocab import Vocab

ds = gen_benchmark(10, seed=1)
for ex in ds:
    print(f"{ex.category:18s} d={ex.difficulty:.2f}  {ex.question!r} -> {ex.rationale!r} | {ex.answer!r}")

# %% [markdown]
# A single family at a fixed size. Difficulty grows linearly with the size knob.

# %%
for size in (2, 3, 4):
    ex = gen_synthetic(TaskSpec("parajumble", size, seed=0), 1)[0]
    print(size, ex.difficulty, ex.prompt_text, "=>", ex.answer)

# %% [markdown]
# Grading looks at the text after the answer marker, trimmed of punctuation.

# %%
ex = ds[0]
print(verify_answer(ex, f"some work<BOA> {ex.answer}.<EOS>"), verify_answer(ex, "no marker at all"))

# %% [markdown]
# The character vocabulary: five specials, then printable ASCII.

# %%
v = Vocab()
print(v.size, v.encode("3+4=7"), v.decode(v.encode("3+4=7")))
