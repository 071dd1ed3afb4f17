"""Independent reference computations used by the test suite and ``verify``."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .ctc import NEG_INF, ctc_log_prob, prefix_log_prob
from .lm import CtxLM


def posterior_row_by_ratio(grid, prefix) -> np.ndarray | None:
    """Label posterior over V+ from separate prefix/full probabilities, or None if dead."""
    prefix = tuple(prefix)
    base = prefix_log_prob(grid, prefix)
    if base == NEG_INF:
        return None
    row = [math.exp(prefix_log_prob(grid, prefix + (c,)) - base) for c in range(grid.n_labels)]
    row.append(math.exp(ctc_log_prob(grid, prefix) - base))
    return np.array(row)


def label_kl_sum(student: CtxLM, grid, seq) -> float:
    """Sum over positions of KL(teacher row || student row); dead rows contribute 0."""
    total = 0.0
    for s in range(len(seq) + 1):
        p = posterior_row_by_ratio(grid, seq[:s])
        if p is None:
            continue
        q = student.log_probs(seq[:s])
        pos = p > 0
        total += float(np.sum(p[pos] * (np.log(p[pos]) - q[pos])))
    return total


def smoothed_loss_direct(student: CtxLM, batch, world, alpha: float) -> float:
    """Smoothed label criterion as an expectation under the interpolated empirical joint.

    Sums over the distinct (grid, sequence) support of
    alpha * Pr~(X, a) + (1 - alpha) * Pr~(X) Pr~(a).
    """
    total_w = math.fsum(p.weight for p in batch)
    joint: dict = defaultdict(float)
    marg_x: dict = defaultdict(float)
    marg_a: dict = defaultdict(float)
    for p in batch:
        w = p.weight / total_w
        joint[(p.grid_id, p.labels)] += w
        marg_x[p.grid_id] += w
        marg_a[p.labels] += w
    loss = 0.0
    for x, px in sorted(marg_x.items()):
        for a, pa in sorted(marg_a.items()):
            weight = alpha * joint.get((x, a), 0.0) + (1 - alpha) * px * pa
            if weight:
                loss += weight * label_kl_sum(student, world.grids[x], a)
    return loss


def finite_difference_grad(loss_fn, student: CtxLM, contexts, h: float = 1e-5) -> dict:
    """Central differences of ``loss_fn(student)`` w.r.t. every logit of ``contexts``."""
    out = {}
    for ctx in contexts:
        base = student.logit_row(ctx).copy()
        g = np.zeros_like(base)
        for i in range(base.shape[0]):
            for sign in (1, -1):
                row = base.copy()
                row[i] += sign * h
                student.logits[ctx] = row
                g[i] += sign * loss_fn(student)
            g[i] /= 2 * h
        student.logits[ctx] = base
        out[ctx] = g
    return out


def gradient_relative_error(analytic: dict, numeric: dict) -> float:
    keys = sorted(analytic, key=lambda c: (len(c), c))
    a = np.concatenate([analytic[k] for k in keys])
    n = np.concatenate([numeric[k] for k in keys])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))
