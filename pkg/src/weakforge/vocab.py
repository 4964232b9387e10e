"""Character vocabulary and role-annotated token sequences."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ContractViolation

SPECIALS = ("PAD", "BOQ", "BOR", "BOA", "EOS")

# printable ASCII, space through tilde
PRINTABLE = tuple(chr(c) for c in range(32, 127))


class Vocab:
    """Dense token ids: specials first, then content symbols in order.

    Specials render as ``<NAME>`` when decoded to text, which is how the
    answer extractor finds the ``<BOA>`` marker in generated output.
    """

    def __init__(self, symbols: Sequence[str] = PRINTABLE, specials: Sequence[str] = SPECIALS):
        symbols = tuple(symbols)
        specials = tuple(specials)
        if len(set(symbols)) != len(symbols):
            raise ContractViolation("vocab symbols must be unique")
        if len(set(specials)) != len(specials):
            raise ContractViolation("special names must be unique")
        markers = {f"<{s}>" for s in specials}
        if markers & set(symbols):
            raise ContractViolation("specials overlap content symbols")
        self.symbols = symbols
        self.specials = specials
        self.tokens = tuple(f"<{s}>" for s in specials) + symbols
        self._special_id = {name: i for i, name in enumerate(specials)}
        self._sym_id = {s: i + len(specials) for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def hash(self) -> bytes:
        """8-byte digest identifying the id assignment."""
        blob = json.dumps({"specials": self.specials, "symbols": self.symbols}).encode()
        return hashlib.sha256(blob).digest()[:8]

    def special(self, name: str) -> int:
        try:
            return self._special_id[name]
        except KeyError:
            raise ContractViolation(f"vocab has no special {name!r}") from None

    @property
    def pad(self) -> int:
        return self.special("PAD")

    @property
    def boq(self) -> int:
        return self.special("BOQ")

    @property
    def bor(self) -> int:
        return self.special("BOR")

    @property
    def boa(self) -> int:
        return self.special("BOA")

    @property
    def eos(self) -> int:
        return self.special("EOS")

    def encode(self, text: str, unknown: str | None = None) -> list[int]:
        """Map text to ids one character per token.

        Out-of-alphabet characters raise unless ``unknown`` names a
        replacement symbol.
        """
        out = []
        for ch in text:
            i = self._sym_id.get(ch)
            if i is None:
                if unknown is None:
                    raise ContractViolation(f"character {ch!r} is not in the vocabulary")
                i = self._sym_id[unknown]
            out.append(i)
        return out

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.tokens[int(i)] for i in ids)

    def is_special(self, token_id: int) -> bool:
        return token_id < len(self.specials)


@dataclass(frozen=True)
class TokenSequence:
    """Token ids with half-open role spans (question, rationale, answer)."""

    ids: tuple[int, ...]
    spans: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        last = -1
        for role in ("question", "rationale", "answer"):
            if role not in self.spans:
                continue
            a, b = self.spans[role]
            if not (0 <= a <= b <= len(self.ids)) or a < last:
                raise ContractViolation(f"bad {role} span {(a, b)}")
            last = b

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self.ids + tuple(other.ids))

    def span(self, role: str) -> tuple[int, int]:
        return self.spans.get(role, (0, 0))

    def validate(self, vocab_size: int) -> None:
        if any(i < 0 or i >= vocab_size for i in self.ids):
            raise ContractViolation("token id outside vocabulary")


def as_ids(seq: TokenSequence | Sequence[int]) -> tuple[int, ...]:
    if isinstance(seq, TokenSequence):
        return seq.ids
    return tuple(int(i) for i in seq)
