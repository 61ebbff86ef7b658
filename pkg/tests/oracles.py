"""Independent reference implementations used only by the tests.

They favour obviousness over speed: dense matrices, Python loops, exact
rationals and arbitrary precision. None of them import the code under test
except for plain data containers.
"""

from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import numpy as np
from scipy.special import softmax as scipy_softmax


def naive_softmax(row):
    exps = [math.exp(x) for x in row]
    total = math.fsum(exps)
    return [e / total for e in exps]


def mp_cosine(a, b, dps=50):
    with mpmath.workdps(dps):
        a = [mpmath.mpf(float(x)) for x in a]
        b = [mpmath.mpf(float(x)) for x in b]
        dot = mpmath.fsum(x * y for x, y in zip(a, b))
        na = mpmath.sqrt(mpmath.fsum(x * x for x in a))
        nb = mpmath.sqrt(mpmath.fsum(y * y for y in b))
        return float(dot / (na * nb))


def dense_attention_matrix(q, k):
    """Full causal attention matrix built in one shot from the dense logits."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    n, d = q.shape
    logits = (q @ k.T) / math.sqrt(d)
    logits[np.triu_indices(n, 1)] = -np.inf
    return scipy_softmax(logits, axis=1)


def three_step_scores(q, k, l_win):
    """Global and local scores: build A, then sum all rows / the last l_win rows."""
    a = dense_attention_matrix(q, k)
    return a.sum(axis=0), a[-l_win:].sum(axis=0)


def combine_oracle(s_glo, s_loc):
    s_glo = [float(x) for x in s_glo]
    s_loc = [float(x) for x in s_loc]
    ratio = math.fsum(s_loc) / math.fsum(s_glo)
    return np.array([max(g * ratio, l) for g, l in zip(s_glo, s_loc)])


def pool_oracle(s, kernel):
    s = list(map(float, s))
    n, r = len(s), kernel // 2
    out = []
    for i in range(n):
        window = s[max(0, i - r) : min(n, i + r + 1)]
        out.append(math.fsum(window) / len(window))
    return np.array(out)


def sparsity_oracle(score, zeta):
    """Exact rational count of the fewest tokens covering ``zeta`` of the mass."""
    vals = sorted((Fraction(float(x)) for x in score), reverse=True)
    total = sum(vals)
    target = Fraction(float(zeta)) * total
    acc = Fraction(0)
    for i, x in enumerate(vals, start=1):
        acc += x
        if acc >= target:
            return 1.0 - i / len(vals)
    return 0.0


def _cos(a, b):
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return max(-1.0, min(1.0, math.fsum(x * y for x, y in zip(a, b)) / (na * nb)))


def redundancy_oracle(k, v):
    k = np.asarray(k, dtype=np.float64).tolist()
    v = np.asarray(v, dtype=np.float64).tolist()
    n = len(k)
    R = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            R[i, j] = _cos(k[i], k[j]) * _cos(v[i], v[j])
    return R


def redundancy_rate_oracle(k, v, tau):
    """Fraction of tokens with some earlier token whose similarity product reaches tau."""
    k = np.asarray(k, dtype=np.float64).tolist()
    v = np.asarray(v, dtype=np.float64).tolist()
    n = len(k)
    hits = 0
    for i in range(1, n):
        if any(_cos(k[i], k[j]) * _cos(v[i], v[j]) >= tau for j in range(i)):
            hits += 1
    return hits / n


def rope_oracle(x, pos, base):
    """Rotate one vector with explicit 2x2 rotations."""
    x = [float(t) for t in x]
    d = len(x)
    out = []
    for i in range(d // 2):
        theta = pos * base ** (-2.0 * i / d)
        c, s = math.cos(theta), math.sin(theta)
        a, b = x[2 * i], x[2 * i + 1]
        out += [a * c - b * s, a * s + b * c]
    return np.array(out)


def naive_attention(q, keys, values):
    """Single query over explicit keys/values with Python-level softmax."""
    d = len(q)
    logits = [math.fsum(float(a) * float(b) for a, b in zip(q, k)) / math.sqrt(d) for k in keys]
    m = max(logits)
    w = naive_softmax([x - m for x in logits])
    values = np.asarray(values, dtype=np.float64)
    return np.array([math.fsum(w[i] * values[i, c] for i in range(len(w))) for c in range(values.shape[1])]), w


def dense_causal_rotated(q, k, v, base):
    """Dense causal attention outputs with RoPE, every row via ``naive_attention``."""
    n = len(q)
    kr = [rope_oracle(k[j], j, base) if base else np.asarray(k[j], float) for j in range(n)]
    rows = []
    for t in range(n):
        qr = rope_oracle(q[t], t, base) if base else np.asarray(q[t], float)
        rows.append(naive_attention(qr, kr[: t + 1], v[: t + 1])[0])
    return np.array(rows)


class EvictOnlySimulator:
    """Score-based eviction over exact tokens, written from scratch.

    Prefill keeps the last ``l_win`` tokens plus the top ``n_budget - l_win``
    of the rest by the pooled combined score (ties to the earlier token). Each
    decode step appends a token, attends, accumulates scores and, once over
    budget, evicts the non-local entry with the lowest unpooled score (ties
    evict the later token).
    """

    def __init__(self, k, v, s_glo, s_loc_past, l_win, n_budget, kernel, rope_base):
        self.l_win, self.n_budget, self.rope_base = l_win, n_budget, rope_base
        n = len(k)
        imp = combine_oracle(s_glo, s_loc_past)
        pooled = pool_oracle(imp, kernel)
        n_old = n - l_win
        order = sorted(range(n_old), key=lambda i: (-pooled[i], i))[: n_budget - l_win]
        keep = sorted(order) + list(range(n_old, n))
        self.pos = list(keep)
        self.k = [np.asarray(k[i], float) for i in keep]
        self.v = [np.asarray(v[i], float) for i in keep]
        self.glo = [float(s_glo[i]) for i in keep]
        self.past = [float(s_loc_past[i]) for i in keep]
        self.cur = [0.0] * len(keep)
        self.fill = 0
        self.seen = n

    def step(self, q, k, v):
        t = self.seen
        self.seen += 1
        self.pos.append(t)
        self.k.append(np.asarray(k, float))
        self.v.append(np.asarray(v, float))
        self.glo.append(0.0)
        self.past.append(0.0)
        self.cur.append(0.0)
        kr = [rope_oracle(kk, p, self.rope_base) for kk, p in zip(self.k, self.pos)]
        qr = rope_oracle(q, t, self.rope_base)
        out, w = naive_attention(qr, kr, self.v)
        for i, wi in enumerate(w):
            self.glo[i] += wi
            self.cur[i] += wi
        self.fill += 1
        if self.fill == self.l_win:
            self.past, self.cur, self.fill = self.cur, [0.0] * len(self.cur), 0
        if len(self.pos) > self.n_budget:
            loc = [p + c for p, c in zip(self.past, self.cur)]
            imp = combine_oracle(self.glo, loc)
            n_old = len(self.pos) - self.l_win
            worst = sorted(range(n_old), key=lambda i: (imp[i], -i))[0]
            for lst in (self.pos, self.k, self.v, self.glo, self.past, self.cur):
                del lst[worst]
        return out
