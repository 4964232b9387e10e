"""Tiny decoder-only language model with hand-written reverse mode.

Parameters live in one flat float64 vector; :class:`TinyLM` maps named
blocks onto views of it. Architecture per block is pre-norm: LayerNorm,
causal multi-head attention, residual, LayerNorm, GELU feed-forward,
residual. A final LayerNorm feeds an output projection tied to the token
embedding.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .errors import ContractViolation, IncompatibleSnapshotError, NumericOverflowError
from .rng import Xoshiro256
from .vocab import TokenSequence, Vocab, as_ids

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
EOS_ID = 4  # id of EOS under the default special ordering
PAD_ID = 0


@dataclass(frozen=True)
class ArchConfig:
    d_model: int = 32
    context_length: int = 64
    n_layer: int = 1
    n_head: int = 2
    ff_mult: int = 4

    def __post_init__(self):
        if min(self.d_model, self.context_length, self.n_layer, self.n_head, self.ff_mult) < 1:
            raise ContractViolation("architecture sizes must be positive")
        if self.d_model % self.n_head:
            raise ContractViolation("d_model must be divisible by n_head")

    @property
    def d_ff(self) -> int:
        return self.d_model * self.ff_mult

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def param_shapes(arch: ArchConfig, vocab_size: int) -> list[tuple[str, tuple[int, ...]]]:
    d, f = arch.d_model, arch.d_ff
    shapes = [("wte", (vocab_size, d)), ("wpe", (arch.context_length, d))]
    for i in range(arch.n_layer):
        p = f"h{i}."
        shapes += [
            (p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
            (p + "wq", (d, d)), (p + "wk", (d, d)), (p + "wv", (d, d)), (p + "wo", (d, d)),
            (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
            (p + "w1", (d, f)), (p + "b1", (f,)), (p + "w2", (f, d)), (p + "b2", (d,)),
        ]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,))]
    return shapes


def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_backward(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * u**3))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


class TinyLM:
    """Stateless forward/backward over a flat parameter vector."""

    def __init__(self, arch: ArchConfig, vocab_size: int):
        self.arch = arch
        self.vocab_size = vocab_size
        self.layout: dict[str, tuple[slice, tuple[int, ...]]] = {}
        off = 0
        for name, shape in param_shapes(arch, vocab_size):
            n = int(np.prod(shape))
            self.layout[name] = (slice(off, off + n), shape)
            off += n
        self.n_params = off

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return {k: theta[s].reshape(shape) for k, (s, shape) in self.layout.items()}

    def init_params(self, gen: Xoshiro256, scale: float = 0.02) -> np.ndarray:
        theta = gen.normals(self.n_params) * scale
        for name, (s, _) in self.layout.items():
            if name.endswith("_g"):
                theta[s] = 1.0
            elif name.endswith("_b") or name.split(".")[-1] in ("b1", "b2"):
                theta[s] = 0.0
        return theta

    def forward(self, theta: np.ndarray, ids: np.ndarray, keep_cache: bool = False):
        a = self.arch
        P = self.unpack(theta)
        B, T = ids.shape
        if T > a.context_length:
            raise ContractViolation(f"sequence length {T} exceeds context {a.context_length}")
        H, dh = a.n_head, a.d_model // a.n_head
        scale = 1.0 / math.sqrt(dh)
        causal = np.triu(np.ones((T, T), dtype=bool), 1)
        x = P["wte"][ids] + P["wpe"][:T]
        caches = []
        for i in range(a.n_layer):
            p = f"h{i}."
            h1, ln1 = _ln_forward(x, P[p + "ln1_g"], P[p + "ln1_b"])
            q = (h1 @ P[p + "wq"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            k = (h1 @ P[p + "wk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            v = (h1 @ P[p + "wv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            s = (q @ k.transpose(0, 1, 3, 2)) * scale
            s = np.where(causal, -np.inf, s)
            s = s - s.max(-1, keepdims=True)
            att = np.exp(s)
            att /= att.sum(-1, keepdims=True)
            o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, a.d_model)
            x = x + o @ P[p + "wo"]
            h2, ln2 = _ln_forward(x, P[p + "ln2_g"], P[p + "ln2_b"])
            u = h2 @ P[p + "w1"] + P[p + "b1"]
            g, tg = _gelu(u)
            x = x + g @ P[p + "w2"] + P[p + "b2"]
            if keep_cache:
                caches.append((h1, ln1, q, k, v, att, o, h2, ln2, u, g, tg))
        hf, lnf = _ln_forward(x, P["lnf_g"], P["lnf_b"])
        logits = hf @ P["wte"].T
        cache = (ids, caches, hf, lnf) if keep_cache else None
        return logits, cache

    def backward(self, theta: np.ndarray, cache, dlogits: np.ndarray) -> np.ndarray:
        a = self.arch
        P = self.unpack(theta)
        grad = np.zeros_like(theta)
        G = self.unpack(grad)
        ids, caches, hf, lnf = cache
        B, T = ids.shape
        H, dh = a.n_head, a.d_model // a.n_head
        scale = 1.0 / math.sqrt(dh)

        G["wte"][...] += np.einsum("btv,btd->vd", dlogits, hf)
        dhf = dlogits @ P["wte"]
        dx, dg, db = _ln_backward(dhf, P["lnf_g"], lnf)
        G["lnf_g"][...] += dg
        G["lnf_b"][...] += db

        for i in reversed(range(a.n_layer)):
            p = f"h{i}."
            h1, ln1, q, k, v, att, o, h2, ln2, u, g, tg = caches[i]
            # feed-forward
            G[p + "w2"][...] += np.einsum("btf,btd->fd", g, dx)
            G[p + "b2"][...] += dx.reshape(-1, a.d_model).sum(0)
            du = (dx @ P[p + "w2"].T) * _gelu_grad(u, tg)
            G[p + "w1"][...] += np.einsum("btd,btf->df", h2, du)
            G[p + "b1"][...] += du.reshape(-1, a.d_ff).sum(0)
            dh2 = du @ P[p + "w1"].T
            dxi, dg, db = _ln_backward(dh2, P[p + "ln2_g"], ln2)
            G[p + "ln2_g"][...] += dg
            G[p + "ln2_b"][...] += db
            dx = dx + dxi
            # attention
            G[p + "wo"][...] += np.einsum("btd,bte->de", o, dx)
            do = (dx @ P[p + "wo"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            datt = do @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ do
            ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.transpose(0, 1, 3, 2) @ q
            dq = dq.transpose(0, 2, 1, 3).reshape(B, T, a.d_model)
            dk = dk.transpose(0, 2, 1, 3).reshape(B, T, a.d_model)
            dv = dv.transpose(0, 2, 1, 3).reshape(B, T, a.d_model)
            G[p + "wq"][...] += np.einsum("btd,bte->de", h1, dq)
            G[p + "wk"][...] += np.einsum("btd,bte->de", h1, dk)
            G[p + "wv"][...] += np.einsum("btd,bte->de", h1, dv)
            dh1 = dq @ P[p + "wq"].T + dk @ P[p + "wk"].T + dv @ P[p + "wv"].T
            dxi, dg, db = _ln_backward(dh1, P[p + "ln1_g"], ln1)
            G[p + "ln1_g"][...] += dg
            G[p + "ln1_b"][...] += db
            dx = dx + dxi

        G["wpe"][:T] += dx.sum(0)
        np.add.at(G["wte"], ids, dx)
        return grad

    def target_logprobs(self, theta: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """``out[b, t] = log p(ids[b, t+1] | ids[b, :t+1])``, shape (B, T-1)."""
        logits, _ = self.forward(theta, ids)
        return _gather_logprobs(logits, ids)

    def forward_logprobs(self, theta: np.ndarray, ids: np.ndarray, keep_cache: bool = True):
        """Target log-probabilities plus what :meth:`logprob_grad` needs."""
        logits, cache = self.forward(theta, ids, keep_cache=keep_cache)
        return _gather_logprobs(logits, ids), (logits, cache)

    def logprob_grad(self, theta: np.ndarray, state, weights: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(weights * target_logprobs)`` from a kept forward pass."""
        logits, cache = state
        ids = cache[0]
        probs = np.exp(logits[:, :-1] - _logsumexp(logits[:, :-1]))
        dlogits = np.zeros_like(logits)
        dl = -probs * weights[..., None]
        B, Tm1 = weights.shape
        bi, ti = np.meshgrid(np.arange(B), np.arange(Tm1), indexing="ij")
        dl[bi, ti, ids[:, 1:]] += weights
        dlogits[:, :-1] = dl
        return self.backward(theta, cache, dlogits)

    def weighted_logprob(self, theta: np.ndarray, ids: np.ndarray, weights: np.ndarray,
                         need_grad: bool = True):
        """Value and gradient of ``sum(weights * target_logprobs)``."""
        lp, state = self.forward_logprobs(theta, ids, keep_cache=need_grad)
        value = float(np.sum(weights * lp))
        if not need_grad:
            return value, None
        return value, self.logprob_grad(theta, state, weights)

    def block_of(self, index: int) -> str:
        for name, (s, _) in self.layout.items():
            if s.start <= index < s.stop:
                return name
        raise IndexError(index)

    def check_finite(self, vec: np.ndarray, what: str = "gradient") -> None:
        if np.all(np.isfinite(vec)):
            return
        for name, (s, _) in self.layout.items():
            if not np.all(np.isfinite(vec[s])):
                raise NumericOverflowError(name, f"{what} overflowed")


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(-1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(-1, keepdims=True))


def _gather_logprobs(logits: np.ndarray, ids: np.ndarray) -> np.ndarray:
    z = logits[:, :-1]
    lse = _logsumexp(z)[..., 0]
    tgt = np.take_along_axis(z, ids[:, 1:, None], axis=-1)[..., 0]
    return tgt - lse


@lru_cache(maxsize=32)
def get_model(arch: ArchConfig, vocab_size: int) -> TinyLM:
    return TinyLM(arch, vocab_size)


# -- snapshots ---------------------------------------------------------------


def _snapshot_id(arch: ArchConfig, vocab_size: int, vocab_hash: bytes, params: np.ndarray,
                 parent_id: str | None, tag: str) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"arch": arch.to_dict(), "V": vocab_size, "parent": parent_id,
                         "tag": tag}, sort_keys=True).encode())
    h.update(vocab_hash)
    h.update(np.ascontiguousarray(params, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    """Immutable, versioned parameter set. Build through :meth:`create`."""

    arch: ArchConfig
    vocab_size: int
    params: np.ndarray
    vocab_hash: bytes
    version_id: str
    parent_id: str | None = None

    @classmethod
    def create(cls, arch: ArchConfig, vocab: Vocab | tuple[int, bytes], params: np.ndarray,
               parent_id: str | None = None, tag: str = "") -> "PolicySnapshot":
        if isinstance(vocab, Vocab):
            vocab_size, vocab_hash = vocab.size, vocab.hash
        else:
            vocab_size, vocab_hash = vocab
        params = np.array(params, dtype=np.float64, copy=True).reshape(-1)
        expected = get_model(arch, vocab_size).n_params
        if params.size != expected:
            raise ContractViolation(f"parameter count {params.size} != {expected} for {arch}")
        params.flags.writeable = False
        vid = _snapshot_id(arch, vocab_size, vocab_hash, params, parent_id, tag)
        return cls(arch, vocab_size, params, bytes(vocab_hash), vid, parent_id)

    @property
    def model(self) -> TinyLM:
        return get_model(self.arch, self.vocab_size)

    @property
    def n_params(self) -> int:
        return self.params.size

    def check_vocab(self, vocab: Vocab | None) -> None:
        if vocab is not None and (vocab.hash != self.vocab_hash or vocab.size != self.vocab_size):
            raise IncompatibleSnapshotError(
                f"snapshot {self.version_id} was built for a different vocabulary")


def init_snapshot(arch: ArchConfig, vocab: Vocab, gen: Xoshiro256, scale: float = 0.02,
                  tag: str = "init") -> PolicySnapshot:
    """Random snapshot: N(0, 1) * scale weights, unit LayerNorm gains, zero biases."""
    model = get_model(arch, vocab.size)
    return PolicySnapshot.create(arch, vocab, model.init_params(gen, scale), tag=tag)


def zero_snapshot(arch: ArchConfig, vocab: Vocab) -> PolicySnapshot:
    return PolicySnapshot.create(arch, vocab, np.zeros(get_model(arch, vocab.size).n_params),
                                 tag="zero")


def same_vocab(a: PolicySnapshot, b: PolicySnapshot) -> None:
    if a.vocab_hash != b.vocab_hash or a.vocab_size != b.vocab_size:
        raise IncompatibleSnapshotError(
            f"snapshots {a.version_id} and {b.version_id} use different vocabularies")


# -- scoring -----------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = PAD_ID) -> np.ndarray:
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def forward_dist(snapshot: PolicySnapshot, context: TokenSequence | Sequence[int],
                 vocab: Vocab | None = None) -> np.ndarray:
    """Next-token distribution after ``context``."""
    snapshot.check_vocab(vocab)
    ids = as_ids(context)
    if not ids:
        raise ContractViolation("context must be nonempty")
    if len(ids) > snapshot.arch.context_length:
        raise ContractViolation(
            f"context length {len(ids)} exceeds {snapshot.arch.context_length}")
    logits, _ = snapshot.model.forward(snapshot.params, np.array([ids], dtype=np.int64))
    z = logits[0, -1]
    p = np.exp(z - z.max())
    return p / p.sum()


def _continuation_weights(prompt_lens, total_lens, T):
    # weight on target position t (predicting token t+1) inside the continuation
    w = np.zeros((len(prompt_lens), T - 1))
    for i, (pl, tl) in enumerate(zip(prompt_lens, total_lens)):
        w[i, pl - 1: tl - 1] = 1.0
    return w


def batch_sequence_logprob(snapshot: PolicySnapshot, prompts: Sequence[Sequence[int]],
                           continuations: Sequence[Sequence[int]]) -> np.ndarray:
    """Vector of ``sequence_logprob`` over aligned prompt/continuation lists."""
    if not prompts:
        return np.zeros(0)
    full = []
    for p, c in zip(prompts, continuations):
        if not p:
            raise ContractViolation("prompt must be nonempty")
        full.append(list(p) + list(c))
    C = snapshot.arch.context_length
    if max(len(s) for s in full) > C:
        raise ContractViolation(f"prompt+continuation exceeds context length {C}")
    ids = pad_batch(full)
    if ids.shape[1] < 2:
        return np.zeros(len(full))
    lp = snapshot.model.target_logprobs(snapshot.params, ids)
    w = _continuation_weights([len(p) for p in prompts], [len(s) for s in full], ids.shape[1])
    return (lp * w).sum(1)


def sequence_logprob(snapshot: PolicySnapshot, prompt: TokenSequence | Sequence[int],
                     continuation: TokenSequence | Sequence[int],
                     vocab: Vocab | None = None) -> float:
    """Sum of next-token log-probabilities of ``continuation`` given ``prompt``."""
    snapshot.check_vocab(vocab)
    p, c = as_ids(prompt), as_ids(continuation)
    if not p:
        raise ContractViolation("prompt must be nonempty")
    if not c:
        return 0.0
    return float(batch_sequence_logprob(snapshot, [p], [c])[0])


# -- sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 1.0
    top_k: int | None = None
    max_new_tokens: int = 48
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ContractViolation("temperature must be nonnegative")
        if self.top_k is not None and self.top_k < 1:
            raise ContractViolation("top_k must be positive or None")
        if self.max_new_tokens < 0:
            raise ContractViolation("max_new_tokens must be nonnegative")

    def with_seed(self, seed: int) -> "DecodeConfig":
        return dataclasses.replace(self, seed=seed)

    def greedy(self) -> "DecodeConfig":
        return dataclasses.replace(self, temperature=0.0)


def pick_token(logits: np.ndarray, cfg: DecodeConfig, gen: Xoshiro256 | None) -> int:
    """One decoding decision from a logit row.

    Greedy takes the first maximal id. Otherwise logits are divided by the
    temperature, optionally restricted to the ``top_k`` largest (ties kept in
    id order), soft-maxed, and a single uniform draw ``u`` selects the first
    id whose cumulative probability exceeds ``u``.
    """
    if cfg.temperature == 0.0:
        return int(np.argmax(logits))
    z = logits / cfg.temperature
    if cfg.top_k is not None and cfg.top_k < z.size:
        order = np.lexsort((np.arange(z.size), -z))
        keep = np.zeros(z.size, dtype=bool)
        keep[order[: cfg.top_k]] = True
        z = np.where(keep, z, -np.inf)
    p = np.exp(z - z.max())
    cdf = np.cumsum(p / p.sum())
    u = gen.random()
    return int(min(np.searchsorted(cdf, u, side="right"), z.size - 1))


def sample_many(snapshot: PolicySnapshot, prompts: Sequence[Sequence[int]],
                cfgs: Sequence[DecodeConfig], stop_id: int = EOS_ID) -> list[tuple[int, ...]]:
    """Decode every prompt under its own config; rows advance in lockstep.

    Each row owns a generator seeded from its config, so a row's output does
    not depend on which other rows share the batch.
    """
    C = snapshot.arch.context_length
    n = len(prompts)
    if n == 0:
        return []
    for p in prompts:
        if not p or len(p) > C:
            raise ContractViolation("prompt must be nonempty and fit the context")
    buf = np.full((n, C), PAD_ID, dtype=np.int64)
    lens = np.array([len(p) for p in prompts])
    for i, p in enumerate(prompts):
        buf[i, : len(p)] = p
    gens = [Xoshiro256(c.seed) if c.temperature > 0 else None for c in cfgs]
    outs: list[list[int]] = [[] for _ in range(n)]
    active = [i for i in range(n) if cfgs[i].max_new_tokens > 0 and lens[i] < C]
    model = snapshot.model
    while active:
        rows = np.array(active)
        T = int(lens[rows].max())
        logits, _ = model.forward(snapshot.params, buf[rows, :T])
        still = []
        for j, i in enumerate(active):
            tok = pick_token(logits[j, lens[i] - 1], cfgs[i], gens[i])
            outs[i].append(tok)
            buf[i, lens[i]] = tok
            lens[i] += 1
            if tok != stop_id and len(outs[i]) < cfgs[i].max_new_tokens and lens[i] < C:
                still.append(i)
        active = still
    return [tuple(o) for o in outs]


def sample(snapshot: PolicySnapshot, prompt: TokenSequence | Sequence[int], cfg: DecodeConfig,
           stop_id: int = EOS_ID, vocab: Vocab | None = None) -> TokenSequence:
    """Continuation of ``prompt`` ending at ``stop_id`` (included), ``max_new_tokens``
    or a full context window."""
    snapshot.check_vocab(vocab)
    if vocab is not None and stop_id == EOS_ID:
        stop_id = vocab.eos
    return TokenSequence(sample_many(snapshot, [as_ids(prompt)], [cfg], stop_id)[0])


# -- gradients and updates ---------------------------------------------------


class LossSpec(Protocol):
    """Scalar loss of a parameter vector with its analytic gradient."""

    def value(self, params: np.ndarray) -> float: ...

    def value_and_grad(self, params: np.ndarray) -> tuple[float, np.ndarray]: ...


def grad_loss(snapshot: PolicySnapshot, loss_spec: LossSpec) -> np.ndarray:
    value, grad = loss_spec.value_and_grad(snapshot.params)
    if not math.isfinite(value):
        # name the first block whose parameters are implicated
        snapshot.model.check_finite(grad, "gradient")
        raise NumericOverflowError("loss", f"loss value {value}")
    snapshot.model.check_finite(grad, "gradient")
    return grad


def apply_update(snapshot: PolicySnapshot, gradient: np.ndarray, lr: float,
                 tag: str = "sgd") -> PolicySnapshot:
    """Plain gradient-descent step; returns a child snapshot."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != snapshot.params.shape:
        raise ContractViolation(
            f"gradient length {gradient.size} != parameter count {snapshot.n_params}")
    if lr < 0:
        raise ContractViolation("learning rate must be nonnegative")
    new = snapshot.params - lr * gradient
    return PolicySnapshot.create(snapshot.arch, (snapshot.vocab_size, snapshot.vocab_hash), new,
                                 parent_id=snapshot.version_id, tag=tag)


def derive(snapshot: PolicySnapshot, params: np.ndarray, tag: str) -> PolicySnapshot:
    """Child snapshot of ``snapshot`` holding ``params``."""
    return PolicySnapshot.create(snapshot.arch, (snapshot.vocab_size, snapshot.vocab_hash), params,
                                 parent_id=snapshot.version_id, tag=tag)
