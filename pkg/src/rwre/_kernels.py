"""Compiled kernels: the Philox4x64-10 generator, conductance lookup and walks.

Every random quantity in the package is a pure function of a 128-bit key and
a 256-bit counter.  Conductances and walk decisions live in disjoint counter
domains selected by the top byte of the first counter word.

All numba code lives in this one module because numba's on-disk cache only
notices edits to the file that defines a function.
"""

import math


import numba as nb
import numpy as np
from llvmlite import ir
from numba.core import types
from numba.extending import intrinsic

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_TAG_SHIFT = np.uint64(56)
_INV53 = 1.0 / 9007199254740992.0

ROUNDS = 10

# conductance law kinds
TWO_POINT = 0
UNIFORM = 1

_ZERO = np.uint64(0)

# domain tags, top byte of counter word 0
TAG_ENV = 0x45
TAG_WALK = 0x57
TAG_CWALK = 0x58

TAG_ENV_WORD = np.uint64(TAG_ENV) << _TAG_SHIFT
TAG_WALK_WORD = np.uint64(TAG_WALK) << _TAG_SHIFT
TAG_CWALK_WORD = np.uint64(TAG_CWALK) << _TAG_SHIFT


@intrinsic
def _umulhi(typingctx, a, b):
    """High 64 bits of the 128-bit product a*b, as a native multiply."""
    sig = types.uint64(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        x, y = args
        i128 = ir.IntType(128)
        prod = builder.mul(builder.zext(x, i128), builder.zext(y, i128))
        return builder.trunc(builder.lshr(prod, ir.Constant(i128, 64)), ir.IntType(64))

    return sig, codegen


@nb.njit(inline="always")
def philox4x64(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block. All arguments are uint64."""
    for _ in range(ROUNDS):
        hi0 = _umulhi(_M0, c0)
        lo0 = _M0 * c0
        hi1 = _umulhi(_M1, c2)
        lo1 = _M1 * c2
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@nb.njit(inline="always")
def to_unit(u):
    """Map a uint64 to a double in [0, 1) using the top 53 bits."""
    return np.float64(u >> _S11) * _INV53




@nb.njit(inline="always")
def edge_conductance(kind, alpha, beta, prob, k0, k1, axis, c0, c1, c2):
    r0, _, _, _ = philox4x64(
        TAG_ENV_WORD | np.uint64(axis), np.uint64(c0), np.uint64(c1), np.uint64(c2), k0, k1
    )
    u = to_unit(r0)
    a = alpha[axis]
    b = beta[axis]
    # branchless: a mispredicted branch here stalls the overlapping Philox blocks
    lo = np.float64(u < prob[axis])
    two_point = lo * a + (1.0 - lo) * b
    uniform = min(a + (b - a) * u, b)
    return two_point if kind == TWO_POINT else uniform


@nb.njit(inline="always")
def incident_conductances(kind, alpha, beta, prob, k0, k1, pos, d, out):
    """Fill out[2a] with edge (x, a) and out[2a+1] with edge (x - e_a, a); return p(x)."""
    c0 = pos[0]
    c1 = pos[1] if d > 1 else 0
    c2 = pos[2] if d > 2 else 0
    total = 0.0
    for a in range(d):
        v = edge_conductance(kind, alpha, beta, prob, k0, k1, a, c0, c1, c2)
        w = edge_conductance(
            kind, alpha, beta, prob, k0, k1, a,
            c0 - (a == 0), c1 - (a == 1), c2 - (a == 2),
        )
        out[2 * a] = v
        out[2 * a + 1] = w
        total += v + w
    return total


@nb.njit(nogil=True, cache=True)
def _conductance_many(kind, alpha, beta, prob, k0, k1, bases, axes):
    n, d = bases.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        c1 = bases[i, 1] if d > 1 else 0
        c2 = bases[i, 2] if d > 2 else 0
        out[i] = edge_conductance(kind, alpha, beta, prob, k0, k1, axes[i], bases[i, 0], c1, c2)
    return out


@nb.njit(nogil=True, cache=True)
def _incident_many(kind, alpha, beta, prob, k0, k1, sites):
    n, d = sites.shape
    out = np.empty((n, 2 * d), dtype=np.float64)
    weights = np.empty(n, dtype=np.float64)
    for i in range(n):
        weights[i] = incident_conductances(kind, alpha, beta, prob, k0, k1, sites[i], d, out[i])
    return out, weights


@nb.njit(nogil=True, cache=True)
def _origin_weights(kind, alpha, beta, prob, k0, env_ids, d):
    n = env_ids.shape[0]
    out = np.empty(n, dtype=np.float64)
    pos = np.zeros(d, dtype=np.int64)
    buf = np.empty(2 * d, dtype=np.float64)
    for i in range(n):
        out[i] = incident_conductances(kind, alpha, beta, prob, k0, env_ids[i], pos, d, buf)
    return out


@nb.njit(inline="always")
def _pick(buf, m, u):
    # inverse CDF, first j with u < buf[0] + ... + buf[j]; branchless count
    acc = 0.0
    k = 0
    for j in range(m - 1):
        acc += buf[j]
        k += u >= acc
    return k


@nb.njit(nogil=True, cache=True)
def _discrete_walk(kind, alpha, beta, prob, seed, env, stream, t, d, pos, buf, path):
    words = np.empty(4, dtype=np.uint64)
    left = 0
    block = 0
    calls = 0
    w0 = 0.0
    for s in range(t):
        total = incident_conductances(kind, alpha, beta, prob, seed, env, pos, d, buf)
        calls += 2 * d
        if s == 0:
            w0 = total
        if left == 0:
            words[0], words[1], words[2], words[3] = philox4x64(
                TAG_WALK_WORD, np.uint64(block), _ZERO, _ZERO, seed, stream
            )
            block += 1
            calls += 1
            left = 4
        u = to_unit(words[4 - left]) * total
        left -= 1
        k = _pick(buf, 2 * d, u)
        pos[k >> 1] += 1 - 2 * (k & 1)
        if path.shape[0] > 0:
            path[s + 1, :] = pos
    return w0, calls


@nb.njit(nogil=True, cache=True)
def _discrete_batch(kind, alpha, beta, prob, seed, env_ids, stream_ids, t, d):
    n = env_ids.shape[0]
    positions = np.zeros((n, d), dtype=np.int64)
    weights = np.empty(n, dtype=np.float64)
    buf = np.empty(2 * d, dtype=np.float64)
    path = np.empty((0, d), dtype=np.int64)
    calls = 0
    for i in range(n):
        w, c = _discrete_walk(
            kind, alpha, beta, prob, seed, env_ids[i], stream_ids[i], t, d, positions[i], buf, path
        )
        weights[i] = w
        calls += c
    return positions, weights, calls


@nb.njit(nogil=True, cache=True)
def _continuous_walk(kind, alpha, beta, prob, seed, env, stream, t, d, pos, buf):
    words = np.empty(4, dtype=np.uint64)
    left = 0
    block = 0
    calls = 0
    jumps = 0
    w0 = -1.0
    now = 0.0
    while True:
        total = incident_conductances(kind, alpha, beta, prob, seed, env, pos, d, buf)
        calls += 2 * d
        if w0 < 0.0:
            w0 = total
        if left < 2:
            # refill keeps each jump's two uniforms within one block
            words[0], words[1], words[2], words[3] = philox4x64(
                TAG_CWALK_WORD, np.uint64(block), _ZERO, _ZERO, seed, stream
            )
            block += 1
            calls += 1
            left = 4
        hold = -math.log1p(-to_unit(words[4 - left])) / total
        u = to_unit(words[5 - left]) * total
        left -= 2
        if now + hold > t:
            break
        now += hold
        k = _pick(buf, 2 * d, u)
        pos[k >> 1] += 1 - 2 * (k & 1)
        jumps += 1
    return w0, jumps, calls


@nb.njit(nogil=True, cache=True)
def _continuous_batch(kind, alpha, beta, prob, seed, env_ids, stream_ids, t, d):
    n = env_ids.shape[0]
    positions = np.zeros((n, d), dtype=np.int64)
    weights = np.empty(n, dtype=np.float64)
    jumps = np.empty(n, dtype=np.int64)
    buf = np.empty(2 * d, dtype=np.float64)
    calls = 0
    for i in range(n):
        w, j, c = _continuous_walk(
            kind, alpha, beta, prob, seed, env_ids[i], stream_ids[i], t, d, positions[i], buf
        )
        weights[i] = w
        jumps[i] = j
        calls += c
    return positions, weights, jumps, calls


@nb.njit(cache=True)
def _block(c0, c1, c2, c3, k0, k1):
    return philox4x64(c0, c1, c2, c3, k0, k1)


def philox_block(counter, key):
    """Python-level helper returning the four output words as ints."""
    c = [np.uint64(v & 0xFFFFFFFFFFFFFFFF) for v in counter]
    k = [np.uint64(v & 0xFFFFFFFFFFFFFFFF) for v in key]
    return tuple(int(v) for v in _block(*c, *k))
