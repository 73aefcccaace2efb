"""Numba-compiled inner loops for the layered proximity-graph index.

The graph algorithms live here as plain array code so the hot paths (build
and layer search) run at native speed; all orchestration, tie-breaking and
result shaping stay in hnsw.py. Distances are negated float32 dot products
(smaller = closer), accumulated in a fixed order so repeated runs over the
same inputs are bit-identical.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# distance


@njit(cache=True, fastmath=True)
def point_dist(V, row, q):
    acc = np.float32(0.0)
    for j in range(q.shape[0]):
        acc += V[row, j] * q[j]
    return -acc


@njit(cache=True, fastmath=True)
def row_dist(V, a, b):
    acc = np.float32(0.0)
    for j in range(V.shape[1]):
        acc += V[a, j] * V[b, j]
    return -acc


# ---------------------------------------------------------------------------
# array-backed binary min-heap on (dist, row)


@njit(cache=True)
def _heap_push(hd, hi, size, d, i):
    pos = size
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        parent = (pos - 1) >> 1
        if hd[parent] <= hd[pos]:
            break
        hd[parent], hd[pos] = hd[pos], hd[parent]
        hi[parent], hi[pos] = hi[pos], hi[parent]
        pos = parent
    return size + 1


@njit(cache=True)
def _heap_pop(hd, hi, size):
    top_d = hd[0]
    top_i = hi[0]
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        smallest = pos
        if left < size and hd[left] < hd[smallest]:
            smallest = left
        if right < size and hd[right] < hd[smallest]:
            smallest = right
        if smallest == pos:
            break
        hd[smallest], hd[pos] = hd[pos], hd[smallest]
        hi[smallest], hi[pos] = hi[pos], hi[smallest]
        pos = smallest
    return top_d, top_i, size


# ---------------------------------------------------------------------------
# layer traversal


@njit(cache=True)
def greedy_descent(V, adj, cnt, entry, entry_dist, q):
    """Hill-climb to the locally nearest node on one layer (ef = 1)."""
    improved = True
    while improved:
        improved = False
        best = entry
        best_d = entry_dist
        for idx in range(cnt[entry]):
            nb = adj[entry, idx]
            d = point_dist(V, nb, q)
            if d < best_d:
                best_d = d
                best = nb
        if best != entry:
            entry = best
            entry_dist = best_d
            improved = True
    return entry, entry_dist


@njit(cache=True)
def search_layer(V, adj, cnt, entries, q, ef, visited, epoch, n_rows):
    """Best-first beam search on one layer.

    visited is an epoch-stamped int32 scratch array (cells != epoch count as
    unvisited), so build can reuse one buffer without clearing it. Returns
    up to ef rows with their distances, sorted ascending.
    """
    res_d = np.empty(ef + 1, np.float32)  # negated dists: min-heap == max-heap on d
    res_i = np.empty(ef + 1, np.int32)
    cand_cap = n_rows + ef + 2
    cand_d = np.empty(cand_cap, np.float32)
    cand_i = np.empty(cand_cap, np.int32)
    rsize = 0
    csize = 0
    for t in range(entries.shape[0]):
        e = entries[t]
        if visited[e] == epoch:
            continue
        visited[e] = epoch
        d = point_dist(V, e, q)
        csize = _heap_push(cand_d, cand_i, csize, d, e)
        rsize = _heap_push(res_d, res_i, rsize, -d, e)
        if rsize > ef:
            _, _, rsize = _heap_pop(res_d, res_i, rsize)
    while csize > 0:
        d, c, csize = _heap_pop(cand_d, cand_i, csize)
        if rsize >= ef and d > -res_d[0]:
            break
        for idx in range(cnt[c]):
            nb = adj[c, idx]
            if visited[nb] == epoch:
                continue
            visited[nb] = epoch
            dn = point_dist(V, nb, q)
            if rsize < ef or dn < -res_d[0]:
                csize = _heap_push(cand_d, cand_i, csize, dn, nb)
                rsize = _heap_push(res_d, res_i, rsize, -dn, nb)
                if rsize > ef:
                    _, _, rsize = _heap_pop(res_d, res_i, rsize)
    count = rsize
    out_i = np.empty(count, np.int32)
    out_d = np.empty(count, np.float32)
    for t in range(count - 1, -1, -1):
        nd, ni, rsize = _heap_pop(res_d, res_i, rsize)
        out_d[t] = -nd
        out_i[t] = ni
    return out_i, out_d, count


# ---------------------------------------------------------------------------
# neighbor selection and linking


@njit(cache=True)
def select_neighbors(V, cand_rows, cand_dists, count, m):
    """Diversity-aware pruning: keep a candidate only when it is closer to
    the query point than to any already-selected neighbor; refill from the
    discarded pool. Candidates must arrive sorted by distance ascending."""
    sel = np.empty(m, np.int32)
    nsel = 0
    disc = np.empty(count, np.int32)
    ndisc = 0
    for t in range(count):
        if nsel >= m:
            break
        r = cand_rows[t]
        d = cand_dists[t]
        keep = True
        for s in range(nsel):
            if row_dist(V, r, sel[s]) < d:
                keep = False
                break
        if keep:
            sel[nsel] = r
            nsel += 1
        else:
            disc[ndisc] = r
            ndisc += 1
    t = 0
    while nsel < m and t < ndisc:
        sel[nsel] = disc[t]
        nsel += 1
        t += 1
    return sel, nsel


@njit(cache=True)
def extend_candidates(V, adj, cnt, rows, dists, count, q, ef, visited, epoch):
    """Grow the candidate pool with the candidates' own layer neighbors,
    keeping the best ef by distance. Assumes `visited` already carries the
    epoch marks of the search that produced `rows`, so only genuinely new
    nodes are evaluated. Returns arrays sorted by distance ascending."""
    heap_d = np.empty(ef + 1, np.float32)  # negated dists: max-heap on d
    heap_i = np.empty(ef + 1, np.int32)
    hsize = 0
    for t in range(count):
        hsize = _heap_push(heap_d, heap_i, hsize, -dists[t], rows[t])
        if hsize > ef:
            _, _, hsize = _heap_pop(heap_d, heap_i, hsize)
    for t in range(count):
        r = rows[t]
        for j in range(cnt[r]):
            nb = adj[r, j]
            if visited[nb] == epoch:
                continue
            visited[nb] = epoch
            d = point_dist(V, nb, q)
            if hsize < ef or d < -heap_d[0]:
                hsize = _heap_push(heap_d, heap_i, hsize, -d, nb)
                if hsize > ef:
                    _, _, hsize = _heap_pop(heap_d, heap_i, hsize)
    total = hsize
    out_i = np.empty(total, np.int32)
    out_d = np.empty(total, np.float32)
    for t in range(total - 1, -1, -1):
        nd, ni, hsize = _heap_pop(heap_d, heap_i, hsize)
        out_d[t] = -nd
        out_i[t] = ni
    return out_i, out_d, total


@njit(cache=True)
def link_new_node(V, adj, cnt, src, targets, n_targets, m_max):
    """Write src's forward links and add pruned reverse links."""
    for t in range(n_targets):
        adj[src, t] = targets[t]
    cnt[src] = n_targets
    for t in range(n_targets):
        dst = targets[t]
        c = cnt[dst]
        if c < m_max:
            adj[dst, c] = src
            cnt[dst] = c + 1
            continue
        total = c + 1
        rows = np.empty(total, np.int32)
        dists = np.empty(total, np.float32)
        for i in range(c):
            rows[i] = adj[dst, i]
            dists[i] = row_dist(V, dst, adj[dst, i])
        rows[c] = src
        dists[c] = row_dist(V, dst, src)
        # insertion sort by (dist, row) ascending for a deterministic order
        for i in range(1, total):
            rd = dists[i]
            rr = rows[i]
            j = i - 1
            while j >= 0 and (dists[j] > rd or (dists[j] == rd and rows[j] > rr)):
                dists[j + 1] = dists[j]
                rows[j + 1] = rows[j]
                j -= 1
            dists[j + 1] = rd
            rows[j + 1] = rr
        sel, nsel = select_neighbors(V, rows, dists, total, m_max)
        for i in range(nsel):
            adj[dst, i] = sel[i]
        cnt[dst] = nsel
