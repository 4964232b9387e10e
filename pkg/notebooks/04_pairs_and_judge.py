# %% [markdown]
# # Response pairs and the judge
#
# The stronger model answers an unlabeled question, so does the weaker one,
# and a judge decides whether the stronger response is worth learning from.

# %%
from weakforge.corpus import Example
from weakforge.pairforge import ResponsePair, filter_pairs, judge, judge_many, render_judge_prompt, rule_checks

q = Example("q", "puzzle", "3+4=?", "7", split="unlabeled")
good = ResponsePair(q, "3+4=7", "7", "zzz", "", "strong", "weak")
print(render_judge_prompt(good))

# %% [markdown]
# The rule-based judge operationalizes the prompt's four criteria.

# %%
cases = {
    "good": good,
    "no answer": ResponsePair(q, "3+4=7", "", "zzz", "", "strong", "weak"),
    "repetitive": ResponsePair(q, "7=7=7=7=7=7=7=7=7", "7", "zzz", "", "strong", "weak"),
    "off topic": ResponsePair(q, "xyz", "7", "3+4", "7", "strong", "weak"),
}
for name, p in cases.items():
    print(f"{name:10s} {rule_checks(p)} -> {judge(p, 'rule-based').preferred}")

# %% [markdown]
# Filtering keeps pairs judged strong and preserves their order.

# %%
pairs = list(cases.values())
ps = filter_pairs(pairs, judge_many(pairs, "rule-based"))
print(ps.counts, [p.r1 for p in ps.accepted])
