"""Hot inner loops.

Loop kernels are compiled with numba unless ``ABLPATH_NO_NUMBA`` is set, in
which case the monotonisation runs as plain Python and the mass resampling
switches to a vectorised numpy formulation. ``benchmarks/bench_kernels.py``
times both modes.
"""
import numpy as np

from ._accel import USE_NUMBA, maybe_njit


@maybe_njit(cache=True, nogil=True)
def _interval_center(p, lo, hi):
    vmax = p[lo]
    vmin = p[lo]
    for i in range(lo + 1, hi + 1):
        v = p[i]
        if v > vmax:
            vmax = v
        if v < vmin:
            vmin = v
    return 0.5 * (vmax + vmin)


@maybe_njit(cache=True, nogil=True)
def _monotonise_row(p, out, ls, rs, cs):
    T = p.shape[0]
    for i in range(T):
        out[i] = p[i]

    # maximal runs of strict drops between adjacent samples
    n = 0
    i = 0
    while i < T - 1:
        if p[i + 1] < p[i]:
            j = i + 1
            while j < T - 1 and p[j + 1] < p[j]:
                j += 1
            ls[n] = i
            rs[n] = j
            cs[n] = 0.5 * (p[i] + p[j])
            n += 1
            i = j
        else:
            i += 1
    if n == 0:
        return 0

    while True:
        # grow each interval through the gap towards its neighbours until the
        # samples meet its centerline; gaps hold no strict drops, so growth
        # never changes an interval's extremes
        for a in range(n):
            lo = rs[a - 1] + 1 if a > 0 else 0
            hi = ls[a + 1] - 1 if a < n - 1 else T - 1
            while ls[a] > lo and p[ls[a] - 1] > cs[a]:
                ls[a] -= 1
            while rs[a] < hi and p[rs[a] + 1] < cs[a]:
                rs[a] += 1

        # touching intervals whose centerlines drop are merged and re-centred
        merged = False
        m = 0
        for a in range(1, n):
            if ls[a] == rs[m] + 1 and cs[a] < cs[m]:
                rs[m] = rs[a]
                cs[m] = _interval_center(p, ls[m], rs[m])
                merged = True
            else:
                m += 1
                ls[m] = ls[a]
                rs[m] = rs[a]
                cs[m] = cs[a]
        n = m + 1
        if not merged:
            break

    for a in range(n):
        for i in range(ls[a], rs[a] + 1):
            out[i] = cs[a]
    return n


@maybe_njit(cache=True, nogil=True)
def _monotonise_rows(P):
    N, T = P.shape
    out = np.empty((N, T), dtype=np.float64)
    ls = np.empty(T, dtype=np.int64)
    rs = np.empty(T, dtype=np.int64)
    cs = np.empty(T, dtype=np.float64)
    row = np.empty(T, dtype=np.float64)
    for k in range(N):
        for i in range(T):
            row[i] = P[k, i]
        _monotonise_row(row, out[k], ls, rs, cs)
    return out


@maybe_njit(cache=True, nogil=True)
def _resample_by_mass_loop(masks, masses, levels):
    S = levels.shape[0]
    K = masks.shape[0]
    npix = masks.shape[1]
    out = np.empty((S, npix), dtype=np.float64)
    for j in range(S):
        s = levels[j]
        # first index whose mass reaches s
        k2 = 0
        while k2 < K - 1 and masses[k2] < s:
            k2 += 1
        if masses[k2] <= s or k2 == 0:
            for q in range(npix):
                out[j, q] = masks[k2, q]
            continue
        k1 = k2 - 1
        gap = masses[k2] - masses[k1]
        w = (s - masses[k1]) / gap
        for q in range(npix):
            out[j, q] = masks[k1, q] + w * (masks[k2, q] - masks[k1, q])
    return out


def _resample_by_mass_numpy(masks, masses, levels):
    K = masks.shape[0]
    k2 = np.searchsorted(masses, levels, side="left")
    k2 = np.clip(k2, 0, K - 1)
    attained = (masses[k2] <= levels) | (k2 == 0)
    k1 = np.where(attained, k2, k2 - 1)
    gap = masses[k2] - masses[k1]
    w = np.where(attained, 0.0, (levels - masses[k1]) / np.where(attained, 1.0, gap))
    return masks[k1] + w[:, None] * (masks[k2] - masks[k1])


if USE_NUMBA:
    resample_by_mass = _resample_by_mass_loop
else:
    resample_by_mass = _resample_by_mass_numpy

monotonise_rows = _monotonise_rows
