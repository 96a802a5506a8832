"""Compiled inner loops for message passing.

A model is a bundle of flat arrays (see ``trws.FlatModel``).  Edge kind 0 is
a hard consistency edge described by grouped label orders; kind 1 is a dense
cost matrix stored row-major with rows indexed by the lower endpoint.
"""
import numpy as np
from numba import njit

INF = np.inf

CONSISTENCY = 0
DENSE = 1


@njit(cache=True, inline="always")
def grouped_min(h, perm_src, start_src, perm_dst, start_dst, out):
    """out[dst label] = min of h over source labels in the matching group.

    Returns the number of elementary steps taken.
    """
    ops = 0
    for g in range(start_src.size - 1):
        mn = INF
        for p in range(start_src[g], start_src[g + 1]):
            v = h[perm_src[p]]
            if v < mn:
                mn = v
            ops += 1
        for p in range(start_dst[g], start_dst[g + 1]):
            out[perm_dst[p]] = mn
            ops += 1
        ops += 1
    return ops


@njit(cache=True, inline="always")
def dense_min(h, mat, n_src, n_dst, src_is_row, out):
    for xd in range(n_dst):
        mn = INF
        for xs in range(n_src):
            if src_is_row:
                v = h[xs] + mat[xs * n_dst + xd]
            else:
                v = h[xs] + mat[xd * n_src + xs]
            if v < mn:
                mn = v
        out[xd] = mn


@njit(cache=True, inline="always")
def _send(e, toward_b, h, out, L, ea, eb, kind, mat_off, mats,
          perm_off_a, perm_a, start_off_a, start_a,
          perm_off_b, perm_b, start_off_b, start_b):
    if kind[e] == CONSISTENCY:
        pa = perm_a[perm_off_a[e]:perm_off_a[e + 1]]
        sa = start_a[start_off_a[e]:start_off_a[e + 1]]
        pb = perm_b[perm_off_b[e]:perm_off_b[e + 1]]
        sb = start_b[start_off_b[e]:start_off_b[e + 1]]
        if toward_b:
            grouped_min(h, pa, sa, pb, sb, out)
        else:
            grouped_min(h, pb, sb, pa, sa, out)
    else:
        la = L[ea[e]]
        lb = L[eb[e]]
        m = mats[mat_off[e]:mat_off[e] + la * lb]
        if toward_b:
            dense_min(h, m, la, lb, True, out)
        else:
            dense_min(h, m, lb, la, False, out)


@njit(cache=True, inline="always")
def _subtract_min(v):
    mn = INF
    for k in range(v.size):
        if v[k] < mn:
            mn = v[k]
    if mn < INF:
        for k in range(v.size):
            if v[k] < INF:
                v[k] -= mn
    return mn


@njit(cache=True, inline="always")
def _theta_hat(i, out, unary, uoff, adj_off, adj_edge, adj_is_a, msg, moff_to_a, moff_to_b):
    n = uoff[i + 1] - uoff[i]
    for k in range(n):
        out[k] = unary[uoff[i] + k]
    for q in range(adj_off[i], adj_off[i + 1]):
        e = adj_edge[q]
        base = moff_to_a[e] if adj_is_a[q] else moff_to_b[e]
        for k in range(n):
            out[k] += msg[base + k]


@njit(cache=True)
def trws_iteration(L, unary, uoff, ea, eb, kind, mat_off, mats,
                   perm_off_a, perm_a, start_off_a, start_a,
                   perm_off_b, perm_b, start_off_b, start_b,
                   adj_off, adj_edge, adj_is_a, gamma, resid,
                   msg, moff_to_a, moff_to_b):
    """One forward and one backward sweep; returns (lower bound, feasible flag)."""
    n = L.size
    lmax = 0
    for i in range(n):
        if L[i] > lmax:
            lmax = L[i]
    th = np.empty(lmax)
    h = np.empty(lmax)
    bound = 0.0
    feasible = True
    for sweep in range(2):
        for step in range(n):
            i = step if sweep == 0 else n - 1 - step
            li = L[i]
            thi = th[:li]
            _theta_hat(i, thi, unary, uoff, adj_off, adj_edge, adj_is_a, msg, moff_to_a, moff_to_b)
            if sweep == 1 and resid[i] > 0.0:
                mn = INF
                for k in range(li):
                    if thi[k] < mn:
                        mn = thi[k]
                bound += resid[i] * mn
            for q in range(adj_off[i], adj_off[i + 1]):
                e = adj_edge[q]
                i_is_a = adj_is_a[q]
                # forward sweep sends to higher-indexed neighbours, backward to lower
                if (sweep == 0) != i_is_a:
                    continue
                if i_is_a:
                    inc = moff_to_a[e]
                    outb = moff_to_b[e]
                    lo = L[eb[e]]
                else:
                    inc = moff_to_b[e]
                    outb = moff_to_a[e]
                    lo = L[ea[e]]
                hi = h[:li]
                for k in range(li):
                    if thi[k] == INF:
                        hi[k] = INF
                    else:
                        hi[k] = gamma[i] * thi[k] - msg[inc + k]
                out = msg[outb:outb + lo]
                _send(e, i_is_a, hi, out, L, ea, eb, kind, mat_off, mats,
                      perm_off_a, perm_a, start_off_a, start_a,
                      perm_off_b, perm_b, start_off_b, start_b)
                c = _subtract_min(out)
                if c == INF:
                    feasible = False
                elif sweep == 1:
                    bound += c
    return bound, feasible


@njit(cache=True, inline="always")
def _pair_cost(e, xa, xb, L, ea, eb, kind, mat_off, mats, group_off_a, group_a, group_off_b, group_b):
    if kind[e] == CONSISTENCY:
        if group_a[group_off_a[e] + xa] == group_b[group_off_b[e] + xb]:
            return 0.0
        return INF
    return mats[mat_off[e] + xa * L[eb[e]] + xb]


@njit(cache=True)
def greedy_decode(L, unary, uoff, ea, eb, kind, mat_off, mats,
                  group_off_a, group_a, group_off_b, group_b,
                  adj_off, adj_edge, adj_is_a, msg, moff_to_a, moff_to_b, x):
    """Scan-order conditional argmin; fixed lower neighbours enter through their
    pairwise costs, higher neighbours through their current messages."""
    n = L.size
    for i in range(n):
        li = L[i]
        best = INF
        best_free = INF
        arg = -1
        arg_free = 0
        for k in range(li):
            free = unary[uoff[i] + k]
            fixed = 0.0
            for q in range(adj_off[i], adj_off[i + 1]):
                e = adj_edge[q]
                if adj_is_a[q]:
                    free += msg[moff_to_a[e] + k]
                else:
                    j = ea[e]
                    fixed += _pair_cost(e, x[j], k, L, ea, eb, kind, mat_off, mats,
                                        group_off_a, group_a, group_off_b, group_b)
            if free < best_free:
                best_free = free
                arg_free = k
            v = free + fixed
            if v < best:
                best = v
                arg = k
        x[i] = arg if arg >= 0 else arg_free


@njit(cache=True)
def labeling_energy(L, unary, uoff, ea, eb, kind, mat_off, mats,
                    group_off_a, group_a, group_off_b, group_b, x):
    total = 0.0
    for i in range(L.size):
        total += unary[uoff[i] + x[i]]
    for e in range(ea.size):
        total += _pair_cost(e, x[ea[e]], x[eb[e]], L, ea, eb, kind, mat_off, mats,
                            group_off_a, group_a, group_off_b, group_b)
    return total


@njit(cache=True)
def lbp_iteration(L, unary, uoff, ea, eb, kind, mat_off, mats,
                  perm_off_a, perm_a, start_off_a, start_a,
                  perm_off_b, perm_b, start_off_b, start_b,
                  adj_off, adj_edge, adj_is_a, msg, new_msg, moff_to_a, moff_to_b):
    """Flood update: every message recomputed from the previous iteration's.

    Returns the largest absolute change over finite message entries.
    """
    n = L.size
    lmax = 0
    for i in range(n):
        if L[i] > lmax:
            lmax = L[i]
    th = np.empty(lmax)
    h = np.empty(lmax)
    for i in range(n):
        li = L[i]
        thi = th[:li]
        _theta_hat(i, thi, unary, uoff, adj_off, adj_edge, adj_is_a, msg, moff_to_a, moff_to_b)
        for q in range(adj_off[i], adj_off[i + 1]):
            e = adj_edge[q]
            i_is_a = adj_is_a[q]
            if i_is_a:
                inc = moff_to_a[e]
                outb = moff_to_b[e]
                lo = L[eb[e]]
            else:
                inc = moff_to_b[e]
                outb = moff_to_a[e]
                lo = L[ea[e]]
            hi = h[:li]
            for k in range(li):
                hi[k] = INF if thi[k] == INF else thi[k] - msg[inc + k]
            out = new_msg[outb:outb + lo]
            _send(e, i_is_a, hi, out, L, ea, eb, kind, mat_off, mats,
                  perm_off_a, perm_a, start_off_a, start_a,
                  perm_off_b, perm_b, start_off_b, start_b)
            _subtract_min(out)
    delta = 0.0
    for k in range(msg.size):
        a = msg[k]
        b = new_msg[k]
        if a < INF and b < INF:
            d = abs(a - b)
            if d > delta:
                delta = d
        elif (a < INF) != (b < INF):
            delta = INF
        msg[k] = b
    return delta


@njit(cache=True)
def belief_decode(L, unary, uoff, adj_off, adj_edge, adj_is_a, msg, moff_to_a, moff_to_b, x):
    lmax = 0
    for i in range(L.size):
        if L[i] > lmax:
            lmax = L[i]
    th = np.empty(lmax)
    for i in range(L.size):
        thi = th[:L[i]]
        _theta_hat(i, thi, unary, uoff, adj_off, adj_edge, adj_is_a, msg, moff_to_a, moff_to_b)
        x[i] = np.argmin(thi)
