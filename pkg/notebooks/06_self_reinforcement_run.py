# %% [markdown]
# # A full self-reinforcement run
#
# `pi_0` is a small pretrained base, `pi_1` its fine-tune on seed data, and
# each later model is trained with DPO on pairs where the previous model plays
# strong and the one before it weak. The shipped desk config takes a few
# minutes on one CPU core.

# %%
import logging

from weakforge.pipeline import desk_config, execute

logging.basicConfig(level=logging.INFO, format="%(message)s")
cfg = desk_config(output_dir="runs/notebook-desk")
result = execute(cfg)
for r in result.records:
    print(r.t, r.phase, r.accuracy, r.accepted, r.rejected, r.status)

# %% [markdown]
# The ablation: same seed, every generated pair kept.

# %%
unfiltered = execute(cfg.replace(filtering=False, output_dir=None))
print("filtered", result.accuracies)
print("unfiltered", unfiltered.accuracies)

# %% [markdown]
# Accuracy by difficulty for the final model, as written by `weakforge report`.

# %%
from weakforge.pipeline import difficulty_report, write_report_csv
from weakforge.vocab import Vocab

rows = difficulty_report(result.snapshots[-1], result.test, 4, Vocab())
write_report_csv(rows, "runs/notebook-desk/difficulty.csv")
for b in rows:
    print(f"[{b.lo:.2f}, {b.hi:.2f}] n={b.count} acc={b.accuracy:.3f}")
