"""Reasoning-task corpus: synthetic generators, JSONL I/O, splits, grading.

The five synthetic families are small, programmatically checkable stand-ins
for brainteasers, riddles, puzzles, parajumbles and critical-reasoning items.
Every question, rationale and answer is short enough that a full serialized
example fits a 64-token character context.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import ContractViolation, DatasetParseError, ValidationError
from .rng import Xoshiro256, derive_seed, rng

CATEGORIES = ("brainteaser", "riddle", "puzzle", "parajumble", "critical-reasoning")
SPLITS = ("seed", "unlabeled", "test")

# inclusive bounds of each family's size parameter
SIZE_BOUNDS = {
    "puzzle": (2, 9),               # largest operand
    "parajumble": (2, 5),           # sentences to reorder
    "riddle": (1, 3),               # clue indirection level
    "critical-reasoning": (2, 5),   # number of options
    "brainteaser": (1, 17),         # digit sum
}

_CATEGORY_ALIASES = {
    "brainteasers": "brainteaser", "riddles": "riddle", "puzzles": "puzzle",
    "parajumbles": "parajumble", "critical reasoning": "critical-reasoning",
    "critical_reasoning": "critical-reasoning", "cr": "critical-reasoning",
}


@dataclass(frozen=True)
class Example:
    id: str
    category: str
    question: str
    answer: str | None = None
    rationale: str | None = None
    options: tuple[tuple[str, str], ...] | None = None
    difficulty: float | None = None
    fun: float | None = None
    split: str = "seed"

    def __post_init__(self):
        if self.options is not None:
            object.__setattr__(self, "options", tuple((str(k), str(v)) for k, v in self.options))

    @property
    def prompt_text(self) -> str:
        """Question as shown to a model, options appended."""
        if not self.options:
            return self.question
        return self.question + " " + " ".join(f"{k}){v}" for k, v in self.options)

    def problems(self) -> list[str]:
        """Invariant violations, each naming the offending field."""
        out = []
        if not self.id:
            out.append("id: must be nonempty")
        if self.category not in CATEGORIES:
            out.append(f"category: unknown {self.category!r}")
        if self.split not in SPLITS:
            out.append(f"split: unknown {self.split!r}")
        if self.split in ("seed", "test") and not self.answer:
            out.append(f"answer: required for split {self.split!r}")
        if self.split == "seed" and not self.rationale:
            out.append("rationale: required for split 'seed'")
        if self.split == "unlabeled" and self.rationale:
            out.append("rationale: must be empty for split 'unlabeled'")
        if self.options and self.answer:
            letters = {k.upper() for k, _ in self.options}
            if self.answer.strip().upper() not in letters:
                out.append("answer: not one of the option letters")
        if self.difficulty is not None and not (1.0 <= self.difficulty <= 4.0):
            out.append("difficulty: outside [1, 4]")
        return out

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "question": self.question,
            "options": [list(o) for o in self.options] if self.options is not None else None,
            "rationale": self.rationale,
            "answer": self.answer,
            "difficulty": self.difficulty,
            "fun": self.fun,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Example":
        for key in ("id", "category", "question", "split"):
            if key not in obj:
                raise ValidationError(f"{key}: missing")
        opts = obj.get("options")
        if opts is not None:
            if not isinstance(opts, list) or any(not isinstance(o, list) or len(o) != 2 for o in opts):
                raise ValidationError("options: expected a list of [letter, text] pairs")
            opts = tuple((o[0], o[1]) for o in opts)
        cat = str(obj["category"])
        cat = _CATEGORY_ALIASES.get(cat.lower(), cat)
        diff = obj.get("difficulty")
        fun = obj.get("fun")
        for name, val in (("difficulty", diff), ("fun", fun)):
            if val is not None and not isinstance(val, (int, float)):
                raise ValidationError(f"{name}: expected a number")
        for name in ("id", "question"):
            if not isinstance(obj[name], str):
                raise ValidationError(f"{name}: expected a string")
        return cls(
            id=obj["id"], category=cat, question=obj["question"],
            answer=obj.get("answer"), rationale=obj.get("rationale"), options=opts,
            difficulty=float(diff) if diff is not None else None,
            fun=float(fun) if fun is not None else None, split=obj["split"],
        )


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...] = ()
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ValidationError(f"duplicate id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def with_split(self, split: str) -> "Dataset":
        return Dataset(tuple(e for e in self.examples if e.split == split), self.provenance)


@dataclass(frozen=True)
class TaskSpec:
    """One synthetic family. ``size`` is a fixed value or an inclusive range."""

    category: str
    size: int | tuple[int, int] | None = None
    seed: int = 0

    def size_range(self) -> tuple[int, int]:
        if self.category not in SIZE_BOUNDS:
            raise ContractViolation(f"unsupported category {self.category!r}")
        lo_b, hi_b = SIZE_BOUNDS[self.category]
        if self.size is None:
            return lo_b, hi_b
        lo, hi = (self.size, self.size) if isinstance(self.size, int) else self.size
        if not (lo_b <= lo <= hi <= hi_b):
            raise ContractViolation(
                f"{self.category} size {self.size} outside bounds [{lo_b}, {hi_b}]")
        return lo, hi


def difficulty_of(category: str, size: int) -> float:
    lo, hi = SIZE_BOUNDS[category]
    return 1.0 + 3.0 * (size - lo) / (hi - lo)


# -- the five families -------------------------------------------------------

_OPS = {"+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b}


def _eval_arith(expr: str) -> int:
    """Independent check: evaluate ``(a op b) op c`` with a tiny parser."""
    m = re.fullmatch(r"\((\d+)([-+*])(\d+)\)([-+*])(\d+)", expr)
    if not m:
        raise ValueError(expr)
    a, o1, b, o2, c = m.groups()
    return _OPS[o2](_OPS[o1](int(a), int(b)), int(c))


def puzzle_item(a: int, op1: str, b: int, op2: str, c: int):
    """Two-step arithmetic: ``(a op1 b) op2 c``."""
    t = _OPS[op1](a, b)
    r = _OPS[op2](t, c)
    expr = f"({a}{op1}{b}){op2}{c}"
    if _eval_arith(expr) != r:
        raise AssertionError("arithmetic self-check failed")
    return f"{expr}=?", None, f"{a}{op1}{b}={t},{t}{op2}{c}={r}", str(r)


def _gen_puzzle(g: Xoshiro256, size: int):
    a, b, c = (g.integers(1, size) for _ in range(3))
    op1, op2 = g.choice("+-*"), g.choice("+-*")
    if op1 == "-" and a < b:
        a, b = b, a
    t = _OPS[op1](a, b)
    if op2 == "-" and c > t:
        op2 = "+"
    return puzzle_item(a, op1, b, op2, c)


def parajumble_item(values: Sequence[int], perm: Sequence[int]):
    """Reorder lettered sentences into ascending order of their numbers.

    ``values`` is the coherent (ascending) order; sentence letter ``j`` shows
    ``values[perm[j]]``.
    """
    k = len(values)
    letters = string.ascii_uppercase[:k]
    shown = [values[p] for p in perm]
    question = "Sort " + " ".join(f"{letters[j]}){shown[j]}" for j in range(k))
    order = sorted(range(k), key=lambda j: shown[j])
    return question, None, "<".join(str(shown[j]) for j in order), "".join(letters[j] for j in order)


def _gen_parajumble(g: Xoshiro256, k: int):
    digits = list(range(1, 10))
    g.shuffle(digits)
    values = sorted(digits[:k])
    return parajumble_item(values, g.permutation(k))


def riddle_item(owner_of: Sequence[str], level: int, asked: int, order: Sequence[int]):
    """Three entities X, Y, Z each own one of a, b, c.

    ``owner_of[e]`` is entity ``e``'s item. ``asked`` is the entity whose item
    is requested; ``order`` lists the other two entities in clue order.
    Level 1 states both directly, level 2 gives one direct clue and one
    exclusion, level 3 gives only exclusions.
    """
    ents = "XYZ"
    e1, e2 = order
    items = "abc"
    if level == 1:
        clues = [f"{ents[e1]}={owner_of[e1]}", f"{ents[e2]}={owner_of[e2]}"]
    elif level == 2:
        clues = [f"{ents[e1]}={owner_of[e1]}", f"{ents[e2]}!={owner_of[asked]}"]
    elif level == 3:
        not_e1 = [x for x in items if x != owner_of[e1]]
        clues = [f"{ents[e1]}!={not_e1[0]}", f"{ents[e1]}!={not_e1[1]}",
                 f"{ents[e2]}!={owner_of[asked]}"]
    else:
        raise ContractViolation(f"riddle level {level} outside [1, 3]")
    question = "X,Y,Z own a,b,c; " + ", ".join(clues) + f"; {ents[asked]}=?"
    rationale = f"{ents[e1]}={owner_of[e1]},{ents[e2]}={owner_of[e2]},{ents[asked]}={owner_of[asked]}"
    return question, None, rationale, owner_of[asked]


def _gen_riddle(g: Xoshiro256, level: int):
    owner = list("abc")
    g.shuffle(owner)
    asked = g.below(3)
    rest = [e for e in range(3) if e != asked]
    g.shuffle(rest)
    return riddle_item(owner, level, asked, rest)


def critical_item(lo: int, hi: int, values: Sequence[int]):
    """Pick the option satisfying ``x > lo`` and ``x < hi``; exactly one does."""
    ok = [v for v in values if lo < v < hi]
    if len(ok) != 1:
        raise ContractViolation("exactly one option must satisfy both rules")
    letters = string.ascii_uppercase[: len(values)]
    options = tuple((letters[i], str(v)) for i, v in enumerate(values))
    good = ok[0]
    answer = letters[list(values).index(good)]
    return f"x>{lo}, x<{hi}. Which fits?", options, f"{good}>{lo},{good}<{hi}", answer


def _gen_critical(g: Xoshiro256, n_opts: int):
    lo = g.integers(0, 6)
    hi = lo + g.integers(2, 3)
    good = g.integers(lo + 1, hi - 1)
    outside = [v for v in range(10) if v <= lo or v >= hi]
    g.shuffle(outside)
    values = outside[: n_opts - 1]
    values.insert(g.below(n_opts), good)
    return critical_item(lo, hi, values)


def brainteaser_item(s: int, d: int):
    """Two-digit number ``tu`` with digit sum ``s`` and ``t - u = d``."""
    if (s + d) % 2 or d < 0 or d > s:
        raise ContractViolation("no such two-digit number")
    t, u = (s + d) // 2, (s - d) // 2
    if not (1 <= t <= 9 and 0 <= u <= 9):
        raise ContractViolation("no such two-digit number")
    return (f"n=tu, t+u={s}, t-u={d}. n=?", None, f"2t={s}+{d}={2 * t},t={t},u={u}", f"{t}{u}")


def _gen_brainteaser(g: Xoshiro256, s: int):
    ds = [d for d in range(0, s + 1)
          if (s + d) % 2 == 0 and 1 <= (s + d) // 2 <= 9 and (s - d) // 2 <= 9]
    return brainteaser_item(s, g.choice(ds))


_GENERATORS = {
    "puzzle": _gen_puzzle,
    "parajumble": _gen_parajumble,
    "riddle": _gen_riddle,
    "critical-reasoning": _gen_critical,
    "brainteaser": _gen_brainteaser,
}


def _make(spec: TaskSpec, index: int, ex_id: str) -> Example:
    lo, hi = spec.size_range()
    g = Xoshiro256(derive_seed(spec.seed, spec.category, index))
    size = g.integers(lo, hi)
    q, opts, rat, ans = _GENERATORS[spec.category](g, size)
    return Example(id=ex_id, category=spec.category, question=q, options=opts, rationale=rat,
                   answer=ans, difficulty=difficulty_of(spec.category, size), split="seed")


def _provenance(obj) -> str:
    return "gen:" + hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def gen_synthetic(spec: TaskSpec, n: int) -> Dataset:
    """``n`` examples of one family, each seeded by its index."""
    if n < 1:
        raise ContractViolation("n must be at least 1")
    spec.size_range()
    exs = tuple(_make(spec, i, f"{spec.category}-{i:05d}") for i in range(n))
    return Dataset(exs, _provenance([spec.category, spec.size, spec.seed, n]))


def gen_benchmark(n: int, seed: int, categories: Sequence[str] = CATEGORIES) -> Dataset:
    """Mixed dataset with categories interleaved round-robin (equal counts)."""
    if n < 1:
        raise ContractViolation("n must be at least 1")
    exs = []
    for i in range(n):
        cat = categories[i % len(categories)]
        exs.append(_make(TaskSpec(cat, None, seed), i, f"syn-{i:06d}"))
    return Dataset(tuple(exs), _provenance(["benchmark", list(categories), seed, n]))


# -- JSONL -------------------------------------------------------------------


def emit_jsonl(ds: Dataset | Iterable[Example], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in ds:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
    return path


def ingest_jsonl(path: str | os.PathLike) -> Dataset:
    """Read and validate a dataset file.

    Malformed JSON raises :class:`DatasetParseError` at the first bad line;
    invariant violations are collected across the file and raised together
    as one :class:`ValidationError` whose ``problems`` list names each line
    and field.
    """
    raw = Path(path).read_bytes()
    exs: list[Example] = []
    problems: list[str] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(raw.decode("utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(lineno, f"malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetParseError(lineno, "expected a JSON object")
        try:
            ex = Example.from_json(obj)
        except ValidationError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        problems += [f"line {lineno}: {p}" for p in ex.problems()]
        if ex.id in seen:
            problems.append(f"line {lineno}: id: duplicate of line {seen[ex.id]}")
        seen.setdefault(ex.id, lineno)
        exs.append(ex)
    if problems:
        err = ValidationError("; ".join(problems))
        err.problems = problems
        raise err
    return Dataset(tuple(exs), "file:" + hashlib.sha256(raw).hexdigest()[:16])


# -- splitting ---------------------------------------------------------------


def split_seed_unlabeled(ds: Dataset, n_seed: int, n_unlabeled: int,
                         seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle indices with the ``"split"`` stream and cut seed | unlabeled | test.

    Each partition keeps the input order. Unlabeled copies drop the rationale;
    their answer is kept only as an evaluation key.
    """
    if n_seed < 0 or n_unlabeled < 0 or n_seed + n_unlabeled > len(ds):
        raise ContractViolation(
            f"cannot take {n_seed} seed + {n_unlabeled} unlabeled from {len(ds)} examples")
    perm = rng(seed, "split").permutation(len(ds))
    seed_idx = sorted(perm[:n_seed])
    unl_idx = sorted(perm[n_seed: n_seed + n_unlabeled])
    test_idx = sorted(perm[n_seed + n_unlabeled:])
    exs = ds.examples
    seed_part = tuple(dataclasses.replace(exs[i], split="seed") for i in seed_idx)
    unl_part = tuple(dataclasses.replace(exs[i], split="unlabeled", rationale=None) for i in unl_idx)
    test_part = tuple(dataclasses.replace(exs[i], split="test") for i in test_idx)
    for ex in seed_part:
        if ex.problems():
            raise ValidationError(f"{ex.id}: " + "; ".join(ex.problems()))
    return (Dataset(seed_part, ds.provenance), Dataset(unl_part, ds.provenance),
            Dataset(test_part, ds.provenance))


# -- grading -----------------------------------------------------------------

BOA_MARK = "<BOA>"
EOS_MARK = "<EOS>"
# leading minus signs survive trimming
_TRIM = string.whitespace + string.punctuation.replace("-", "")


def extract_answer(predicted: str) -> str:
    """Answer text after the last BOA marker, or after the last ``answer:``."""
    i = predicted.rfind(BOA_MARK)
    if i >= 0:
        text = predicted[i + len(BOA_MARK):]
    else:
        j = predicted.lower().rfind("answer:")
        text = predicted[j + len("answer:"):] if j >= 0 else predicted
    k = text.find(EOS_MARK)
    if k >= 0:
        text = text[:k]
    return text.strip(_TRIM)


def verify_answer(ex: Example, predicted: str) -> bool:
    gold = (ex.answer or "").strip()
    if not gold:
        raise ContractViolation(f"{ex.id} has no gold answer")
    pred = extract_answer(predicted)
    if not pred:
        return False
    if ex.options:
        return pred.upper() == gold.upper()
    if re.fullmatch(r"-?\d+", gold):
        return re.fullmatch(r"-?\d+", pred) is not None and int(pred) == int(gold)
    return pred == gold.strip(_TRIM)
