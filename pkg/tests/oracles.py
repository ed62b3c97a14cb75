"""Independent brute-force reference implementations used only by tests.

Everything here is deliberately naive (nested loops, no vectorization) and
shares no code with the library paths it checks.
"""

import math

import numpy as np


def conv1d_naive(x, weight, bias, groups):
    """Grouped stride-1 same-padding convolution via explicit loops."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    b, c_in, t_len = x.shape
    c_out, c_in_g, k = weight.shape
    pad = k // 2
    out = np.zeros((b, c_out, t_len))
    c_out_g = c_out // groups
    for bi in range(b):
        for o in range(c_out):
            g = o // c_out_g
            for t in range(t_len):
                acc = bias[o]
                for ci in range(c_in_g):
                    for tau in range(k):
                        src = t + tau - pad
                        if 0 <= src < t_len:
                            acc += weight[o, ci, tau] * x[bi, g * c_in_g + ci, src]
                out[bi, o, t] = acc
    return out


def mix_naive(x, weight, bias):
    x = np.asarray(x, dtype=np.float64)
    b, c, t_len = x.shape
    out = np.zeros_like(x)
    for bi in range(b):
        for j in range(c):
            for t in range(t_len):
                out[bi, j, t] = bias[j] + sum(weight[j, i] * x[bi, i, t] for i in range(c))
    return out


def sliding_sqdist_naive(z, protos):
    """All-window squared distances via triple loops: [B,l,T] x [m,l,L] -> [B,m,S]."""
    z = np.asarray(z, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    b, chans, t_len = z.shape
    m, _, p_len = protos.shape
    s_len = t_len - p_len + 1
    out = np.zeros((b, m, s_len))
    for bi in range(b):
        for j in range(m):
            for s in range(s_len):
                acc = 0.0
                for c in range(chans):
                    for tau in range(p_len):
                        d = z[bi, c, s + tau] - protos[j, c, tau]
                        acc += d * d
                out[bi, j, s] = acc
    return out


def softmax_ce_naive(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, lab in zip(logits, labels):
        mx = row.max()
        total += math.log(sum(math.exp(v - mx) for v in row)) - (row[lab] - mx)
    return total / len(labels)


def clst_naive(latents, labels, protos, proto_classes):
    """Eq.-style clustering term: mean over items of the min over own-class
    prototypes and all windows of the squared distance."""
    dist = sliding_sqdist_naive(latents, protos)
    n = dist.shape[0]
    total = 0.0
    for i in range(n):
        best = math.inf
        for j in range(len(proto_classes)):
            if proto_classes[j] != labels[i]:
                continue
            for s in range(dist.shape[2]):
                best = min(best, dist[i, j, s])
        total += best
    return total / n


def sep_naive(latents, labels, protos, proto_classes):
    dist = sliding_sqdist_naive(latents, protos)
    n = dist.shape[0]
    total = 0.0
    for i in range(n):
        best = math.inf
        for j in range(len(proto_classes)):
            if proto_classes[j] == labels[i]:
                continue
            for s in range(dist.shape[2]):
                best = min(best, dist[i, j, s])
        total += best
    return -total / n


def importance_naive(delta, w):
    """Double-sum feature importance: I_m = sum_j |sum_i delta[i,m] w[i,j]|.

    ``w[i][j]`` maps encoder output i to latent feature j (note: transposed
    relative to the library's mixing-weight layout).
    """
    l, d = np.asarray(delta).shape
    out = np.zeros(d)
    for m in range(d):
        for j in range(l):
            acc = 0.0
            for i in range(l):
                acc += delta[i][m] * w[i][j]
            out[m] += abs(acc)
    return out


def ranks_naive(values_desc_better):
    """Tie-averaged ranks (1 = best) by explicit position counting."""
    vals = list(values_desc_better)
    order = sorted(range(len(vals)), key=lambda i: -vals[i])
    ranks = [0.0] * len(vals)
    pos = 0
    while pos < len(order):
        tied = [order[pos]]
        while pos + len(tied) < len(order) and vals[order[pos + len(tied)]] == vals[order[pos]]:
            tied.append(order[pos + len(tied)])
        mean_rank = sum(range(pos + 1, pos + len(tied) + 1)) / len(tied)
        for idx in tied:
            ranks[idx] = mean_rank
        pos += len(tied)
    return ranks
