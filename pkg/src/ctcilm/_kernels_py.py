"""Pure-Python kernels. Used when the compiled extension is unavailable."""

import math

import numpy as np

NEG_INF = float("-inf")


def _lse(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def ctc_forward(logp, labels):
    """log P(labels | grid) via the extended-label forward recursion.

    The last column of ``logp`` is blank.
    """
    rows = np.asarray(logp, dtype=np.float64).tolist()
    blank = len(rows[0]) - 1
    labels = [int(a) for a in labels]
    n_frames = len(rows)
    ext = [blank]
    for a in labels:
        ext.append(a)
        ext.append(blank)
    n_ext = len(ext)
    alpha = [NEG_INF] * n_ext
    alpha[0] = rows[0][blank]
    if labels:
        alpha[1] = rows[0][labels[0]]
    for t in range(1, n_frames):
        row = rows[t]
        new = [NEG_INF] * n_ext
        for j in range(n_ext):
            acc = alpha[j]
            if j >= 1:
                acc = _lse(acc, alpha[j - 1])
            if j >= 2 and ext[j] != blank and ext[j] != ext[j - 2]:
                acc = _lse(acc, alpha[j - 2])
            if acc != NEG_INF:
                new[j] = acc + row[ext[j]]
        alpha = new
    if not labels:
        return alpha[0]
    return _lse(alpha[n_ext - 1], alpha[n_ext - 2])


def prefix_scores(logp, labels):
    """Prefix masses along ``labels``.

    Returns ``(pref, ext, full)`` with, for every position s = 0..S,
    ``pref[s] = log P(a_1^s, ... | X)``, ``ext[s, c] = log P(a_1^s c, ... | X)``
    and ``full[s] = log P(a_1^s | X)``. Positions past a dead prefix are -inf.
    """
    rows = np.asarray(logp, dtype=np.float64).tolist()
    n_frames = len(rows)
    blank = len(rows[0]) - 1
    labels = [int(a) for a in labels]
    n_pos = len(labels) + 1

    pref = np.full(n_pos, NEG_INF)
    ext = np.full((n_pos, blank), NEG_INF)
    full = np.full(n_pos, NEG_INF)

    # empty prefix: only blank paths, no non-blank ending
    gb = [0.0] * n_frames
    acc = 0.0
    for t in range(n_frames):
        acc += rows[t][blank]
        gb[t] = acc
    gnb = [NEG_INF] * n_frames
    pref[0] = 0.0
    last = -1

    for s in range(n_pos):
        full[s] = _lse(gnb[n_frames - 1], gb[n_frames - 1])
        both = [_lse(gb[t], gnb[t]) for t in range(n_frames)]
        for c in range(blank):
            phi = gb if c == last else both
            psi = rows[0][c] if s == 0 else NEG_INF
            for t in range(1, n_frames):
                if phi[t - 1] != NEG_INF:
                    psi = _lse(psi, phi[t - 1] + rows[t][c])
            ext[s, c] = psi
        if s == n_pos - 1:
            break
        c = labels[s]
        if ext[s, c] == NEG_INF:
            break
        pref[s + 1] = ext[s, c]
        phi = gb if c == last else both
        new_nb = [NEG_INF] * n_frames
        new_b = [NEG_INF] * n_frames
        if s == 0:
            new_nb[0] = rows[0][c]
        for t in range(1, n_frames):
            v = _lse(new_nb[t - 1], phi[t - 1])
            if v != NEG_INF:
                new_nb[t] = v + rows[t][c]
            v = _lse(new_b[t - 1], new_nb[t - 1])
            if v != NEG_INF:
                new_b[t] = v + rows[t][blank]
        gnb, gb = new_nb, new_b
        last = c
    return pref, ext, full


def softmax_descent(logits, mass, target, step, n_steps):
    """Run ``n_steps`` of gradient descent on independent softmax rows, in place.

    Row gradient is ``mass[c] * softmax(logits[c]) - target[c]``.
    """
    mass = mass[:, None]
    for _ in range(n_steps):
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        q = e / e.sum(axis=1, keepdims=True)
        logits -= step * (mass * q - target)
    return logits


def posterior_rows(logp, labels):
    """Label posterior rows over V+ at every position; NaN past a dead prefix."""
    pref, ext, full = prefix_scores(logp, labels)
    n_pos, n_labels = ext.shape
    rows = np.full((n_pos, n_labels + 1), np.nan)
    for s in range(n_pos):
        if pref[s] == NEG_INF:
            break
        rows[s, :n_labels] = np.exp(ext[s] - pref[s])
        rows[s, n_labels] = math.exp(full[s] - pref[s])
    return rows
