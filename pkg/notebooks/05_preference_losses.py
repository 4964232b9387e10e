# %% [markdown]
# # Preference scores and losses
#
# A response's score is `beta * log(pi / pi_ref)` summed over its tokens. The
# training objective compares the strong and weak scores of each pair.

# %%
import numpy as np

from weakforge.prefopt import PrefConfig, dpo_pair_loss, iter_loss, ranking_loss_literal

deltas = np.linspace(-6, 6, 7)
for mode in ("logsigmoid", "hinge-margin", "paper-literal"):
    cfg = PrefConfig(loss_mode=mode, margin=1.0)
    print(f"{mode:14s}", [round(dpo_pair_loss(d, 0.0, cfg), 3) for d in deltas])

# %% [markdown]
# The ranking loss written with a max over already-ordered scores only ever
# shrinks gaps. It is kept as a literal reference.

# %%
print(ranking_loss_literal([3, 1]), ranking_loss_literal([5, 2, 0]))

# %% [markdown]
# Reflection: the logsigmoid loss at `-d` exceeds the loss at `d` by exactly `d`.

# %%
cfg = PrefConfig()
print(max(abs(dpo_pair_loss(-d, 0, cfg) - dpo_pair_loss(d, 0, cfg) - d) for d in deltas))
print(iter_loss([1.0, 0.2], [0.0, 0.5], cfg))
