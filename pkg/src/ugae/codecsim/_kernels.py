"""Numba kernels: adaptive binary range coder, octree and attribute DPCM.

The coder is a byte-oriented carry-propagating range coder with a 32-bit
range. Each context keeps a pair of adaptive bit counts (start 1/1, +1 per
coded bit, halved when the pair exceeds ``COUNT_LIMIT``). Bypass bins use
fixed 1/1 counts.

Stream layout: the always-zero leading byte of the carry scheme is dropped
and trailing zero bytes are stripped; the decoder pads with zeros. Because
the final interval is pinned to the value with the most trailing zero bits,
the stripped stream is the shortest one that decodes identically.
"""

import numpy as np
from numba import njit

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
COUNT_LIMIT = 1 << 13

# attribute binarization
N_EG_CTX = 16  # exp-Golomb prefix contexts per channel
CTX_PER_CH = 2 + N_EG_CTX


@njit(cache=True)
def _enc_shift(st, out):
    # st = [low, rng, cache, cache_size, pos]
    low = st[0]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = st[2]
        while True:
            out[st[4]] = (temp + carry) & 0xFF
            st[4] += 1
            temp = 0xFF
            st[3] -= 1
            if st[3] == 0:
                break
        st[2] = (low >> 24) & 0xFF
    st[3] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def _enc_bit(st, out, bit, c0, c1):
    r = st[1] // (c0 + c1)
    bound = r * c0
    if bit == 0:
        st[1] = bound
    else:
        st[0] += bound
        st[1] -= bound
    while st[1] < TOP:
        st[1] <<= 8
        _enc_shift(st, out)


@njit(cache=True)
def _enc_ctx(st, out, bit, counts, ctx):
    _enc_bit(st, out, bit, counts[ctx, 0], counts[ctx, 1])
    counts[ctx, bit] += 1
    if counts[ctx, 0] + counts[ctx, 1] > COUNT_LIMIT:
        counts[ctx, 0] = (counts[ctx, 0] + 1) >> 1
        counts[ctx, 1] = (counts[ctx, 1] + 1) >> 1


@njit(cache=True)
def _enc_new(n_ctx_bins, n_bypass_bins):
    # A context bin costs at most log2(COUNT_LIMIT + 1) < 14 bits, a bypass
    # bin exactly one; size the buffer for the worst case (no bounds checks).
    st = np.zeros(5, dtype=np.int64)
    st[1] = MASK32
    st[3] = 1
    out = np.zeros(2 * n_ctx_bins + n_bypass_bins // 8 + 64, dtype=np.uint8)
    return st, out


@njit(cache=True)
def _enc_finish(st, out):
    low = st[0]
    high = low + st[1]  # exclusive
    # value in [low, high) with the most trailing zero bits
    for b in range(40, -1, -1):
        m = (np.int64(1) << b) - 1
        v = (low + m) & ~m
        if v < high:
            st[0] = v
            break
    for _ in range(5):
        _enc_shift(st, out)
    n = st[4]
    while n > 1 and out[n - 1] == 0:
        n -= 1
    # out[0] is the leading zero byte of the carry scheme
    return out[1:n].copy()


@njit(cache=True)
def _dec_byte(data, ds):
    # ds = [code, rng, pos]
    p = ds[2]
    ds[2] += 1
    if p < data.shape[0]:
        return np.int64(data[p])
    return np.int64(0)


@njit(cache=True)
def _dec_new(data):
    ds = np.zeros(3, dtype=np.int64)
    ds[1] = MASK32
    code = np.int64(0)
    for _ in range(4):
        code = (code << 8) | _dec_byte(data, ds)
    ds[0] = code
    return ds


@njit(cache=True)
def _dec_bit(data, ds, c0, c1):
    r = ds[1] // (c0 + c1)
    bound = r * c0
    if ds[0] < bound:
        ds[1] = bound
        bit = 0
    else:
        ds[0] -= bound
        ds[1] -= bound
        bit = 1
    while ds[1] < TOP:
        ds[1] <<= 8
        ds[0] = ((ds[0] << 8) | _dec_byte(data, ds)) & MASK32
    return bit


@njit(cache=True)
def _dec_ctx(data, ds, counts, ctx):
    bit = _dec_bit(data, ds, counts[ctx, 0], counts[ctx, 1])
    counts[ctx, bit] += 1
    if counts[ctx, 0] + counts[ctx, 1] > COUNT_LIMIT:
        counts[ctx, 0] = (counts[ctx, 0] + 1) >> 1
        counts[ctx, 1] = (counts[ctx, 1] + 1) >> 1
    return bit


# ---------------------------------------------------------------------------
# generic bin coding (used by tests and the octree encoder)


@njit(cache=True)
def encode_bins(bits, ctxs, n_ctx):
    st, out = _enc_new(bits.shape[0], 0)
    counts = np.ones((n_ctx, 2), dtype=np.int64)
    for i in range(bits.shape[0]):
        _enc_ctx(st, out, np.int64(bits[i]), counts, ctxs[i])
    return _enc_finish(st, out)


@njit(cache=True)
def decode_bins(data, ctxs, n_ctx):
    ds = _dec_new(data)
    counts = np.ones((n_ctx, 2), dtype=np.int64)
    bits = np.zeros(ctxs.shape[0], dtype=np.uint8)
    for i in range(ctxs.shape[0]):
        bits[i] = _dec_ctx(data, ds, counts, ctxs[i])
    return bits, ds[2]


# ---------------------------------------------------------------------------
# octree


@njit(cache=True)
def encode_occupancy(occ):
    """Code occupancy bytes bit by bit, child slot 0..7 as the context."""
    st, out = _enc_new(8 * occ.shape[0], 0)
    counts = np.ones((8, 2), dtype=np.int64)
    for i in range(occ.shape[0]):
        byte = np.int64(occ[i])
        for j in range(8):
            _enc_ctx(st, out, (byte >> j) & 1, counts, j)
    return _enc_finish(st, out)


@njit(cache=True)
def decode_octree_keys(data, depth, max_nodes):
    """Breadth-first octree decode.

    Returns ``(keys, status, offset)``; status 0 = ok, 1 = empty occupancy
    byte, 2 = node budget exceeded, 3 = trailing bytes. ``offset`` is the
    decoder's byte position when the problem was detected.
    """
    ds = _dec_new(data)
    counts = np.ones((8, 2), dtype=np.int64)
    nodes = np.zeros(1, dtype=np.int64)
    for _level in range(depth):
        n = nodes.shape[0]
        children = np.empty(8 * n, dtype=np.int64)
        m = 0
        for i in range(n):
            any_set = False
            for j in range(8):
                if _dec_ctx(data, ds, counts, j):
                    if m >= max_nodes:
                        return children[:0], 2, min(ds[2], data.shape[0])
                    children[m] = (nodes[i] << 3) | j
                    m += 1
                    any_set = True
            if not any_set:
                return children[:0], 1, min(ds[2], data.shape[0])
        nodes = children[:m]
    if ds[2] < data.shape[0]:
        return nodes, 3, ds[2]
    return nodes, 0, 0


# ---------------------------------------------------------------------------
# attributes: closed-loop DPCM, exp-Golomb binarization


@njit(cache=True)
def _enc_residual(st, out, counts, base, q):
    if q == 0:
        _enc_ctx(st, out, 0, counts, base)
        return
    _enc_ctx(st, out, 1, counts, base)
    _enc_ctx(st, out, 1 if q < 0 else 0, counts, base + 1)
    # exp-Golomb (order 0) of |q| - 1: nbits-long unary prefix, then the
    # nbits low bits of m = |q| as bypass bins
    m = abs(q)
    nbits = 0
    while (m >> (nbits + 1)) > 0:
        nbits += 1
    for i in range(nbits):
        _enc_ctx(st, out, 1, counts, base + 2 + min(i, N_EG_CTX - 1))
    _enc_ctx(st, out, 0, counts, base + 2 + min(nbits, N_EG_CTX - 1))
    for i in range(nbits - 1, -1, -1):
        _enc_bit(st, out, (m >> i) & 1, 1, 1)


@njit(cache=True)
def _dec_residual(data, ds, counts, base):
    if _dec_ctx(data, ds, counts, base) == 0:
        return np.int64(0), True
    neg = _dec_ctx(data, ds, counts, base + 1)
    nbits = 0
    while _dec_ctx(data, ds, counts, base + 2 + min(nbits, N_EG_CTX - 1)):
        nbits += 1
        if nbits > 40:
            return np.int64(0), False
    m = np.int64(1)
    for _ in range(nbits):
        m = (m << 1) | _dec_bit(data, ds, 1, 1)
    return (-m if neg else m), True


@njit(cache=True)
def _quantize(r, step):
    # uniform, no dead zone, round half away from zero
    a = np.floor(abs(r) / step + 0.5)
    return np.int64(-a if r < 0 else a)


@njit(cache=True)
def encode_dpcm(yuv, ref, step):
    """Closed-loop DPCM of YUV rows; ``ref[i] < i`` or -1 (predict 128).

    Returns ``(payload, reconstruction, residual_symbols)``.
    """
    n = yuv.shape[0]
    # per channel: flag + sign + at most 64 prefix bins, at most 63 bypass
    st, out = _enc_new(66 * 3 * n, 63 * 3 * n)
    counts = np.ones((3 * CTX_PER_CH, 2), dtype=np.int64)
    recon = np.empty((n, 3), dtype=np.float64)
    syms = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        for c in range(3):
            pred = 128.0 if ref[i] < 0 else recon[ref[i], c]
            q = _quantize(yuv[i, c] - pred, step)
            syms[i, c] = q
            _enc_residual(st, out, counts, c * CTX_PER_CH, q)
            v = pred + q * step
            recon[i, c] = min(255.0, max(0.0, v))
    return _enc_finish(st, out), recon, syms


@njit(cache=True)
def decode_dpcm(data, ref, step):
    """Inverse of :func:`encode_dpcm`. Returns ``(recon, status, offset)``."""
    n = ref.shape[0]
    ds = _dec_new(data)
    counts = np.ones((3 * CTX_PER_CH, 2), dtype=np.int64)
    recon = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        for c in range(3):
            pred = 128.0 if ref[i] < 0 else recon[ref[i], c]
            q, ok = _dec_residual(data, ds, counts, c * CTX_PER_CH)
            if not ok:
                return recon, 1, min(ds[2], data.shape[0])
            v = pred + q * step
            recon[i, c] = min(255.0, max(0.0, v))
    if ds[2] < data.shape[0]:
        return recon, 3, ds[2]
    return recon, 0, 0
