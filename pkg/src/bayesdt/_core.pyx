# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled score kernel: the box DP on uint64 limb bitmasks.

Mirrors ``bayesdt._pure.run_dp`` statement for statement — same candidate
order, same accumulation order, same libm calls — so the two backends produce
bit-identical tables.  Masks live in arenas with stack discipline (a frame's
allocations are freed when it resolves), keeping memory proportional to DP
depth rather than entry count.
"""

from libc.math cimport NAN, exp, log
from libc.stdint cimport int64_t, uint64_t
from libcpp.string cimport string
from libcpp.unordered_map cimport unordered_map
from libcpp.unordered_set cimport unordered_set
from libcpp.vector cimport vector

import numpy as np

from .errors import MemoCapExceeded

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef struct Part:
    int feature
    int cut
    double threshold
    size_t left_off
    size_t right_off


cdef struct Frame:
    size_t mask_off
    size_t mask_mark
    size_t parts_begin
    size_t parts_end
    bint expanded




def run_dp(
    long n_points,
    int limbs,
    int64_t[::1] offsets,
    uint64_t[:, ::1] at_level,
    uint64_t[:, ::1] below,
    double[::1] values,
    uint64_t[:, ::1] class_rows,
    double[:, ::1] table_a,
    double[::1] table_b,
    double ln_phi,
    long memo_cap,
):
    cdef int d = offsets.shape[0] - 1
    cdef int n_classes = class_rows.shape[0]

    cdef vector[uint64_t] arena      # transient masks, stack-disciplined
    cdef vector[Part] parts          # candidate partitions, stack-disciplined
    cdef vector[Frame] stack
    cdef vector[uint64_t] cur        # the mask of the frame being processed
    cdef vector[double] terms
    cdef unordered_map[string, long] rows
    cdef unordered_set[string] seen
    cdef string scratch

    cdef vector[uint64_t] out_keys
    cdef vector[double] out_leaf, out_mass, out_best, out_thr
    cdef vector[int] out_feature, out_cut

    cdef size_t max_depth = 1, loff, roff, pi
    cdef long lookups = 0, hits = 0, row, row_l, row_r
    cdef Frame frame, child
    cdef Part part
    cdef int i, j, c, v, prev, nonzero, count, total
    cdef int64_t base, nlev
    cdef double acc, log_leaf, high, term, cand, tot, log_mass
    cdef double best_val, best_thr
    cdef int best_feature, best_cut

    cur.resize(limbs)
    rows.reserve(1 << 16)
    # root mask: low n_points bits set
    frame.mask_off = 0
    frame.expanded = False
    for i in range(limbs):
        arena.push_back(<uint64_t> 0)
    for i in range(n_points):
        arena[i >> 6] |= (<uint64_t> 1) << (i & 63)
    stack.push_back(frame)

    while stack.size() > 0:
        frame = stack.back()
        stack.pop_back()
        for i in range(limbs):
            cur[i] = arena[frame.mask_off + i]
        scratch.assign(<char*> cur.data(), <size_t> (limbs * 8))
        if rows.count(scratch):
            continue

        if not frame.expanded:
            # First visit: enumerate deduplicated partitions, then park this
            # frame beneath its unresolved children (LIFO resolves them first).
            frame.mask_mark = arena.size()
            frame.parts_begin = parts.size()
            seen.clear()
            for j in range(d):
                base = offsets[j]
                nlev = offsets[j + 1] - base
                prev = -1
                for v in range(nlev):
                    nonzero = 0
                    for i in range(limbs):
                        if cur[i] & at_level[base + v, i]:
                            nonzero = 1
                            break
                    if not nonzero:
                        continue
                    if prev >= 0:
                        loff = arena.size()
                        for i in range(limbs):
                            arena.push_back(cur[i] & below[base + prev, i])
                        scratch.assign(<char*> (arena.data() + loff), <size_t> (limbs * 8))
                        if seen.count(scratch):
                            arena.resize(loff)
                        else:
                            seen.insert(scratch)
                            roff = arena.size()
                            for i in range(limbs):
                                arena.push_back(cur[i] ^ arena[loff + i])
                            part.feature = j
                            part.cut = prev
                            part.threshold = (values[base + prev] + values[base + v]) / 2.0
                            part.left_off = loff
                            part.right_off = roff
                            parts.push_back(part)
                    prev = v
            frame.parts_end = parts.size()
            frame.expanded = True
            stack.push_back(frame)
            child.expanded = False
            child.mask_mark = 0
            child.parts_begin = 0
            child.parts_end = 0
            for pi in range(frame.parts_begin, frame.parts_end):
                lookups += 2
                scratch.assign(<char*> (arena.data() + parts[pi].left_off), <size_t> (limbs * 8))
                if rows.count(scratch):
                    hits += 1
                else:
                    child.mask_off = parts[pi].left_off
                    stack.push_back(child)
                scratch.assign(<char*> (arena.data() + parts[pi].right_off), <size_t> (limbs * 8))
                if rows.count(scratch):
                    hits += 1
                else:
                    child.mask_off = parts[pi].right_off
                    stack.push_back(child)
            if stack.size() > max_depth:
                max_depth = stack.size()
            continue

        # Second visit: all children resolved; compute this entry.
        total = 0
        for i in range(limbs):
            total += __builtin_popcountll(cur[i])
        acc = 0.0
        for c in range(n_classes):
            count = 0
            for i in range(limbs):
                count += __builtin_popcountll(cur[i] & class_rows[c, i])
            acc += table_a[c, count]
        log_leaf = acc - table_b[total]

        if frame.parts_end > frame.parts_begin:
            best_val = log_leaf
            best_feature = -1
            best_cut = -1
            best_thr = NAN
            high = log_leaf
            terms.clear()
            for pi in range(frame.parts_begin, frame.parts_end):
                scratch.assign(<char*> (arena.data() + parts[pi].left_off), <size_t> (limbs * 8))
                row_l = rows.at(scratch)
                scratch.assign(<char*> (arena.data() + parts[pi].right_off), <size_t> (limbs * 8))
                row_r = rows.at(scratch)
                term = out_mass[row_l] + out_mass[row_r] - ln_phi
                terms.push_back(term)
                if term > high:
                    high = term
                cand = out_best[row_l] + out_best[row_r] - ln_phi
                if cand > best_val:
                    best_val = cand
                    best_feature = parts[pi].feature
                    best_cut = parts[pi].cut
                    best_thr = parts[pi].threshold
            tot = exp(log_leaf - high)
            for pi in range(terms.size()):
                tot += exp(terms[pi] - high)
            log_mass = high + log(tot)
        else:
            log_mass = log_leaf
            best_val = log_leaf
            best_feature = -1
            best_cut = -1
            best_thr = NAN

        if <long> out_leaf.size() >= memo_cap:
            raise MemoCapExceeded(
                f"memo table exceeded the configured cap of {memo_cap} entries"
            )
        row = <long> out_leaf.size()
        scratch.assign(<char*> cur.data(), <size_t> (limbs * 8))
        rows[scratch] = row
        for i in range(limbs):
            out_keys.push_back(cur[i])
        out_leaf.push_back(log_leaf)
        out_mass.push_back(log_mass)
        out_best.push_back(best_val)
        out_feature.push_back(best_feature)
        out_cut.push_back(best_cut)
        out_thr.push_back(best_thr)

        arena.resize(frame.mask_mark)
        parts.resize(frame.parts_begin)

    cdef size_t cnt = out_leaf.size()
    keys_blob = (<char*> out_keys.data())[: cnt * limbs * 8]
    leaf_arr = np.asarray(<double[:cnt]> out_leaf.data()).copy()
    mass_arr = np.asarray(<double[:cnt]> out_mass.data()).copy()
    best_arr = np.asarray(<double[:cnt]> out_best.data()).copy()
    feature_arr = np.asarray(<int[:cnt]> out_feature.data()).copy()
    cut_arr = np.asarray(<int[:cnt]> out_cut.data()).copy()
    thr_arr = np.asarray(<double[:cnt]> out_thr.data()).copy()
    stats = (int(cnt), int(max_depth), int(lookups), int(hits))
    return keys_blob, leaf_arr, mass_arr, best_arr, feature_arr, cut_arr, thr_arr, stats
