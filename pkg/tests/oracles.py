"""Slow, independent reference implementations used only by the tests."""
import math

import numpy as np


def ceil_log2_oracle(x):
    # smallest b with 2**b >= x, by counting
    b = 0
    while (1 << b) < x:
        b += 1
    return b


def sparsity_levels_oracle(n, d, r, c):
    k = r + c
    s_u = (32 * r * n) // (32 + ceil_log2_oracle(n * k))
    s_v = (32 * r * d) // (32 + ceil_log2_oracle(d * k))
    return min(s_u, n * k), min(s_v, d * k)


def singular_values_oracle(m):
    """Singular values from the eigenvalues of m^T m (descending)."""
    a = np.asarray(m, dtype=np.float64)
    g = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    ev = np.linalg.eigh(g)[0][::-1]
    return np.sqrt(np.clip(ev, 0.0, None))


def matmul_oracle(a, b):
    n, k = a.shape
    d = b.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(d):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def sensitivity_oracle(u, v, z):
    """Direct triple-loop sums of the zeroing costs."""
    u = np.asarray(u, np.float64)
    v = np.asarray(v, np.float64)
    z = np.asarray(z, np.float64)
    n, k = u.shape
    d = v.shape[1]
    q_u = np.zeros((n, k))
    q_v = np.zeros((k, d))
    for i in range(n):
        for j in range(k):
            q_u[i, j] = sum(z[i, t] * abs(u[i, j] * v[j, t]) for t in range(d))
    for i in range(k):
        for j in range(d):
            q_v[i, j] = sum(z[t, j] * abs(u[t, i] * v[i, j]) for t in range(n))
    return q_u, q_v


def top_s_oracle(m, s):
    flat = [float(x) for x in np.asarray(m, np.float32).ravel()]
    cand = sorted((i for i, x in enumerate(flat) if x != 0), key=lambda i: (-abs(flat[i]), i))
    return sorted(cand[:s])


def greedy_pack_oracle(u, v, q_u, q_v, cost_u, cost_v, cap):
    """Sort the live nonzero factor entries by (-q, U first, index); pack until one fails."""
    u = np.asarray(u)
    v = np.asarray(v)
    n, k = u.shape
    d = v.shape[1]
    items = []
    for i in range(n):
        for j in range(k):
            if u[i, j] != 0 and any(v[j, t] != 0 for t in range(d)):
                items.append((-float(q_u[i, j]), 0, i * k + j))
    for j in range(k):
        for t in range(d):
            if v[j, t] != 0 and any(u[i, j] != 0 for i in range(n)):
                items.append((-float(q_v[j, t]), 1, j * d + t))
    items.sort()
    used = 0
    keep_u, keep_v = [], []
    for _, which, idx in items:
        cost = cost_u if which == 0 else cost_v
        if used + cost > cap:
            break
        used += cost
        (keep_u if which == 0 else keep_v).append(idx)
    return sorted(keep_u), sorted(keep_v)


def pack_bits_oracle(indices, width):
    """MSB-first bit string, padded with zeros to whole bytes."""
    bits = "".join(format(i, f"0{width}b") for i in indices) if width else ""
    bits += "0" * (-len(bits) % 8)
    return bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))


def proxy_oracle(delta, recon, z):
    return math.fsum(float(zz) * abs(float(a) - float(b))
                     for zz, a, b in zip(np.ravel(z), np.ravel(delta), np.ravel(recon)))
