# cython: boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled BPE kernels. Same contract as ``babylab._bpe_py``."""

from libc.stdint cimport uint64_t, int64_t
from libcpp.vector cimport vector
from libcpp.unordered_map cimport unordered_map
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort, unique

IMPLEMENTATION = "cython"

ctypedef pair[int64_t, uint64_t] HeapEntry


cdef inline uint64_t pack(int a, int b) nogil:
    return (<uint64_t>a << 32) | <uint64_t><unsigned int>b


cdef inline HeapEntry entry(int64_t count, uint64_t key) nogil:
    # max-heap: larger count first, then smaller packed pair
    return HeapEntry(count, <uint64_t>0xFFFFFFFFFFFFFFFF - key)


cdef void merge_word(vector[int]& w, int a, int b, int new_id, vector[int]& out) nogil:
    cdef size_t i = 0
    cdef size_t n = w.size()
    out.clear()
    while i < n:
        if i + 1 < n and w[i] == a and w[i + 1] == b:
            out.push_back(new_id)
            i += 2
        else:
            out.push_back(w[i])
            i += 1


def learn_merges(list words, list counts, int n_merges, int next_id):
    cdef vector[vector[int]] ws
    cdef vector[int64_t] cs
    cdef unordered_map[uint64_t, int64_t] pair_counts
    cdef unordered_map[uint64_t, vector[int]] where
    cdef priority_queue[HeapEntry] heap
    cdef vector[int] tmp
    cdef vector[int] merged
    cdef vector[int] wids
    cdef vector[uint64_t] touched
    cdef size_t i, j, k
    cdef int wi, a, b, new_id
    cdef int64_t c
    cdef uint64_t key
    cdef HeapEntry top

    for w, cnt in zip(words, counts):
        tmp.clear()
        for x in w:
            tmp.push_back(<int>x)
        ws.push_back(tmp)
        cs.push_back(<int64_t>cnt)

    for i in range(ws.size()):
        if ws[i].size() < 2:
            continue
        for j in range(ws[i].size() - 1):
            key = pack(ws[i][j], ws[i][j + 1])
            pair_counts[key] += cs[i]
            where[key].push_back(<int>i)

    for kv in pair_counts:
        if kv.second > 0:
            heap.push(entry(kv.second, kv.first))

    merges = []
    while <int>len(merges) < n_merges and not heap.empty():
        top = heap.top()
        heap.pop()
        key = <uint64_t>0xFFFFFFFFFFFFFFFF - top.second
        if top.first <= 0 or pair_counts.count(key) == 0 or pair_counts[key] != top.first:
            continue
        a = <int>(key >> 32)
        b = <int>(key & 0xFFFFFFFF)
        new_id = next_id + <int>len(merges)
        merges.append((a, b))

        wids = where[key]
        where.erase(key)
        sort(wids.begin(), wids.end())
        wids.erase(unique(wids.begin(), wids.end()), wids.end())
        touched.clear()
        for k in range(wids.size()):
            wi = wids[k]
            merge_word(ws[wi], a, b, new_id, merged)
            if merged.size() == ws[wi].size():
                continue
            c = cs[wi]
            for j in range(ws[wi].size() - 1):
                key = pack(ws[wi][j], ws[wi][j + 1])
                pair_counts[key] -= c
                touched.push_back(key)
            if merged.size() >= 2:
                for j in range(merged.size() - 1):
                    key = pack(merged[j], merged[j + 1])
                    pair_counts[key] += c
                    where[key].push_back(wi)
                    touched.push_back(key)
            ws[wi] = merged
        sort(touched.begin(), touched.end())
        touched.erase(unique(touched.begin(), touched.end()), touched.end())
        for k in range(touched.size()):
            key = touched[k]
            c = pair_counts[key]
            if c > 0:
                heap.push(entry(c, key))
            else:
                pair_counts.erase(key)
    return merges


def apply_merges(word, dict ranks):
    cdef list w = list(word)
    cdef Py_ssize_t i, n, best_pos
    cdef object r, best
    while len(w) > 1:
        best = None
        best_pos = -1
        n = len(w)
        for i in range(n - 1):
            r = ranks.get((w[i], w[i + 1]))
            if r is not None and (best is None or r < best):
                best = r
                best_pos = i
        if best is None:
            break
        a = w[best_pos]
        b = w[best_pos + 1]
        out = []
        i = 0
        while i < n:
            if i + 1 < n and w[i] == a and w[i + 1] == b:
                out.append(best)
                i += 2
            else:
                out.append(w[i])
                i += 1
        w = out
    return w
