"""Compiled split searches over one node's rows."""

import numpy as np
from numba import njit

TIE_TOL = 1e-10


@njit(cache=True)
def best_numeric(x, y, min_leaf):
    """Best ``x <= t`` split of complete rows by between-group sum of squares.

    Returns (improvement, threshold); improvement is -1 when no admissible
    split exists. Ties keep the lowest threshold.
    """
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ys = y[order]
    total = 0.0
    for i in range(n):
        total += ys[i]
    best = -1.0
    thr = np.nan
    s_left = 0.0
    base = total * total / n
    for i in range(n - 1):
        s_left += ys[i]
        if xs[i + 1] <= xs[i]:
            continue
        nl = i + 1
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        s_right = total - s_left
        imp = s_left * s_left / nl + s_right * s_right / nr - base
        if imp > best + TIE_TOL:
            best = imp
            thr = 0.5 * (xs[i] + xs[i + 1])
    return best, thr


@njit(cache=True)
def best_categorical(codes, n_levels, y, min_leaf):
    """Best level subset going left, scanning levels sorted by mean response.

    Returns (improvement, left-mask over levels); improvement -1 when none.
    """
    n = codes.shape[0]
    cnt = np.zeros(n_levels)
    sm = np.zeros(n_levels)
    for i in range(n):
        cnt[codes[i]] += 1.0
        sm[codes[i]] += y[i]
    present = np.empty(n_levels, np.int64)
    means = np.empty(n_levels)
    m = 0
    for lv in range(n_levels):
        if cnt[lv] > 0:
            present[m] = lv
            means[m] = sm[lv] / cnt[lv]
            m += 1
    present = present[:m]
    means = means[:m]
    order = np.argsort(means, kind="mergesort")
    total = 0.0
    for i in range(n):
        total += y[i]
    base = total * total / n
    best = -1.0
    cut = -1
    nl = 0.0
    s_left = 0.0
    for k in range(m - 1):
        lv = present[order[k]]
        nl += cnt[lv]
        s_left += sm[lv]
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        s_right = total - s_left
        imp = s_left * s_left / nl + s_right * s_right / nr - base
        if imp > best + TIE_TOL:
            best = imp
            cut = k
    mask = np.zeros(n_levels, np.bool_)
    if cut >= 0:
        for k in range(cut + 1):
            mask[present[order[k]]] = True
    return best, mask


@njit(cache=True)
def numeric_agreement(x, goes_left):
    """Best ``x <= t`` surrogate for a fixed left/right routing.

    Returns (agreement, threshold, reversed); reversed means ``x <= t`` maps
    to the right child. Agreement is a fraction of the supplied rows.
    """
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    total_left = 0.0
    for i in range(n):
        if goes_left[i]:
            total_left += 1.0
    best = -1.0
    thr = np.nan
    rev = False
    left_below = 0.0
    for i in range(n - 1):
        if goes_left[order[i]]:
            left_below += 1.0
        if xs[i + 1] <= xs[i]:
            continue
        below = i + 1.0
        right_above = (n - below) - (total_left - left_below)
        agree = (left_below + right_above) / n
        if agree > best + TIE_TOL:
            best = agree
            thr = 0.5 * (xs[i] + xs[i + 1])
            rev = False
        if 1.0 - agree > best + TIE_TOL:
            best = 1.0 - agree
            thr = 0.5 * (xs[i] + xs[i + 1])
            rev = True
    return best, thr, rev


@njit(cache=True)
def best_over_features(F, is_cat, n_levels, y, rows, min_leaf, allowed):
    """Scan every allowed feature at a node; first feature wins ties.

    ``F`` holds numeric values or categorical codes as floats, NaN when
    missing. Returns (feature index or -1, improvement, threshold, mask).
    """
    p = F.shape[1]
    max_lv = 1
    for j in range(p):
        if n_levels[j] > max_lv:
            max_lv = n_levels[j]
    best_j = -1
    best_imp = -1.0
    best_thr = np.nan
    best_mask = np.zeros(max_lv, np.bool_)
    xs = np.empty(rows.shape[0])
    ys = np.empty(rows.shape[0])
    for j in range(p):
        if not allowed[j]:
            continue
        m = 0
        for r in rows:
            v = F[r, j]
            if not np.isnan(v):
                xs[m] = v
                ys[m] = y[r]
                m += 1
        if m < 2:
            continue
        if is_cat[j]:
            codes = xs[:m].astype(np.int64)
            imp, mask = best_categorical(codes, n_levels[j], ys[:m], min_leaf)
            if imp > best_imp + TIE_TOL:
                best_j, best_imp, best_thr = j, imp, np.nan
                best_mask[:] = False
                best_mask[: n_levels[j]] = mask
        else:
            imp, thr = best_numeric(xs[:m], ys[:m], min_leaf)
            if imp > best_imp + TIE_TOL:
                best_j, best_imp, best_thr = j, imp, thr
                best_mask[:] = False
    return best_j, best_imp, best_thr, best_mask


@njit(cache=True)
def categorical_agreement(codes, n_levels, goes_left):
    """Send each level to the side most of its rows take under the primary."""
    n = codes.shape[0]
    lc = np.zeros(n_levels)
    rc = np.zeros(n_levels)
    for i in range(n):
        if goes_left[i]:
            lc[codes[i]] += 1.0
        else:
            rc[codes[i]] += 1.0
    mask = np.zeros(n_levels, np.bool_)
    agree = 0.0
    for lv in range(n_levels):
        if lc[lv] >= rc[lv]:
            mask[lv] = lc[lv] > 0
            agree += lc[lv]
        else:
            agree += rc[lv]
    return agree / n, mask
