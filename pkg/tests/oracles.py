"""Independent reference computations used by the tests.

Everything here is scalar pure Python: loops over positions, heads and
features, ``math`` for transcendental functions, no numpy arithmetic. The
parameter layout is rebuilt from its documented block order rather than
read from the package, so a layout bug shows up as a mismatch.
"""

from __future__ import annotations

import math


def blocks(d, ctx, n_layer, d_ff, V):
    out = [("wte", (V, d)), ("wpe", (ctx, d))]
    for i in range(n_layer):
        p = f"h{i}."
        out += [(p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
                (p + "wq", (d, d)), (p + "wk", (d, d)), (p + "wv", (d, d)), (p + "wo", (d, d)),
                (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
                (p + "w1", (d, d_ff)), (p + "b1", (d_ff,)), (p + "w2", (d_ff, d)), (p + "b2", (d,))]
    out += [("lnf_g", (d,)), ("lnf_b", (d,))]
    return out


def unflatten(flat, d, ctx, n_layer, d_ff, V):
    flat = [float(x) for x in flat]
    P, off = {}, 0
    for name, shape in blocks(d, ctx, n_layer, d_ff, V):
        if len(shape) == 1:
            P[name] = flat[off: off + shape[0]]
            off += shape[0]
        else:
            r, c = shape
            P[name] = [flat[off + i * c: off + (i + 1) * c] for i in range(r)]
            off += r * c
    assert off == len(flat), "parameter count mismatch"
    return P


def layernorm(x, g, b, eps=1e-5):
    n = len(x)
    mu = sum(x) / n
    var = sum((v - mu) ** 2 for v in x) / n
    r = 1.0 / math.sqrt(var + eps)
    return [(x[i] - mu) * r * g[i] + b[i] for i in range(n)]


def matvec(x, W):
    # x @ W with W stored row-major (in_dim rows)
    cols = len(W[0])
    return [sum(x[i] * W[i][j] for i in range(len(x))) for j in range(cols)]


def gelu(u):
    return 0.5 * u * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (u + 0.044715 * u ** 3)))


def logits_at_each_position(flat, ids, d, ctx, n_layer, n_head, d_ff, V):
    """Logit rows for every prefix of ``ids``, computed one position at a time."""
    P = unflatten(flat, d, ctx, n_layer, d_ff, V)
    T = len(ids)
    dh = d // n_head
    xs = [[P["wte"][ids[t]][k] + P["wpe"][t][k] for k in range(d)] for t in range(T)]
    for i in range(n_layer):
        p = f"h{i}."
        h = [layernorm(x, P[p + "ln1_g"], P[p + "ln1_b"]) for x in xs]
        q = [matvec(v, P[p + "wq"]) for v in h]
        k = [matvec(v, P[p + "wk"]) for v in h]
        v_ = [matvec(v, P[p + "wv"]) for v in h]
        att_out = []
        for t in range(T):
            o = [0.0] * d
            for hd in range(n_head):
                sl = range(hd * dh, (hd + 1) * dh)
                scores = [sum(q[t][c] * k[s][c] for c in sl) / math.sqrt(dh) for s in range(t + 1)]
                m = max(scores)
                ex = [math.exp(s - m) for s in scores]
                z = sum(ex)
                for c in sl:
                    o[c] = sum(ex[s] / z * v_[s][c] for s in range(t + 1))
            att_out.append(o)
        xs = [[xs[t][c] + y for c, y in enumerate(matvec(att_out[t], P[p + "wo"]))] for t in range(T)]
        new = []
        for x in xs:
            h2 = layernorm(x, P[p + "ln2_g"], P[p + "ln2_b"])
            u = [a + b for a, b in zip(matvec(h2, P[p + "w1"]), P[p + "b1"])]
            f = [a + b for a, b in zip(matvec([gelu(z) for z in u], P[p + "w2"]), P[p + "b2"])]
            new.append([a + b for a, b in zip(x, f)])
        xs = new
    out = []
    for x in xs:
        hf = layernorm(x, P["lnf_g"], P["lnf_b"])
        out.append([sum(hf[c] * P["wte"][tok][c] for c in range(d)) for tok in range(V)])
    return out


def softmax(z):
    m = max(z)
    ex = [math.exp(v - m) for v in z]
    s = sum(ex)
    return [e / s for e in ex]


def next_dist(flat, context, arch, V):
    rows = logits_at_each_position(flat, list(context), arch.d_model, arch.context_length,
                                   arch.n_layer, arch.n_head, arch.d_ff, V)
    return softmax(rows[-1])


def sequence_logprob(flat, prompt, continuation, arch, V):
    """Sum of log next-token probabilities, one fresh prefix evaluation per step."""
    total = 0.0
    ctx = list(prompt)
    for tok in continuation:
        total += math.log(next_dist(flat, ctx, arch, V)[tok])
        ctx.append(tok)
    return total


def sft_loss(flat, examples, arch, V):
    """``examples``: list of (prompt ids, loss-span ids); mean over examples of
    the negative summed log-likelihood of the span."""
    return sum(-sequence_logprob(flat, p, c, arch, V) for p, c in examples) / len(examples)


def pref_score(policy_flat, ref_flat, prompt, response, beta, arch, V):
    return beta * (sequence_logprob(policy_flat, prompt, response, arch, V)
                   - sequence_logprob(ref_flat, prompt, response, arch, V))


def ranking_loss(scores):
    total = 0.0
    for i, si in enumerate(scores):
        for j, sj in enumerate(scores):
            if i != j and si > sj:
                total += max(0.0, si - sj)
    return total


def pair_loss(s_strong, s_weak, mode, margin=1.0):
    gap = s_strong - s_weak
    if mode == "logsigmoid":
        # stable log(1 + exp(-gap))
        return max(-gap, 0.0) + math.log1p(math.exp(-abs(gap)))
    if mode == "hinge-margin":
        return max(0.0, margin - gap)
    return gap if gap > 0 else 0.0


def iter_loss(strong, weak, mode, margin=1.0):
    return sum(pair_loss(a, b, mode, margin) for a, b in zip(strong, weak))


# -- 64-bit generator reference ----------------------------------------------

MASK = (1 << 64) - 1


def splitmix64_stream(x, n):
    out = []
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) & MASK
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def xoshiro_step(s):
    """One xoshiro256** draw: (output, next state)."""
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & MASK  # noqa: E731
    out = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
    s = list(s)
    t = (s[1] << 17) & MASK
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45)
    return out, s


def xoshiro256ss(state, n):
    out = []
    for _ in range(n):
        x, state = xoshiro_step(state)
        out.append(x)
    return out


def fnv1a(data):
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK
    return h


def derived_state(seed, labels):
    s = splitmix64_stream(seed, 1)[0]
    for lab in labels:
        s = splitmix64_stream(s ^ fnv1a(str(lab).encode()), 1)[0]
    return splitmix64_stream(s, 4)


def fisher_yates(seed, labels, n):
    """Walk i = n-1..1, swap with j drawn by bitmask rejection in [0, i]."""
    state = derived_state(seed, labels)
    idx = list(range(n))
    for i in range(n - 1, 0, -1):
        mask = (1 << i.bit_length()) - 1
        while True:
            x, state = xoshiro_step(state)
            j = x & mask
            if j <= i:
                break
        idx[i], idx[j] = idx[j], idx[i]
    return idx
