"""Hard starting partitions: weighted Ward agglomeration refined by weighted PAM.

Ward merges minimise the weighted increase in within-cluster sum of squares,
using the Lance-Williams recurrence on squared Hamming distances

    D(k, i+j) = ((m_i + m_k) D(k, i) + (m_j + m_k) D(k, j) - m_k D(i, j))
                / (m_i + m_j + m_k)

started from D(i, j) = m_i m_j / (m_i + m_j) * d(i, j)^2, where the masses m
are summed sampling weights.
"""

from __future__ import annotations

import numpy as np

_TINY = 1e-300


def collapse_duplicates(D, w):
    """Group rows at distance zero from each other.

    Returns (representative indices, group index of every row, group weights).
    """
    D = np.asarray(D)
    n = D.shape[0]
    group = np.full(n, -1)
    reps = []
    for i in range(n):
        if group[i] >= 0:
            continue
        members = np.flatnonzero((D[i] == 0) & (group < 0))
        group[members] = len(reps)
        reps.append(i)
    reps = np.array(reps)
    gw = np.bincount(group, weights=np.asarray(w, dtype=float), minlength=len(reps))
    return reps, group, gw


def ward_cut(D, w, k: int) -> np.ndarray:
    """Weighted Ward clustering of all rows, cut at ``k`` clusters."""
    D = np.asarray(D, dtype=float)
    mass = np.asarray(w, dtype=float).copy()
    n = D.shape[0]
    labels = np.arange(n)
    if k >= n:
        return labels
    pair = np.outer(mass, mass) / np.maximum(mass[:, None] + mass[None, :], _TINY)
    M = pair * D**2
    np.fill_diagonal(M, np.inf)
    active = np.ones(n, dtype=bool)
    for _ in range(n - k):
        i, j = divmod(int(np.argmin(M)), n)
        if i > j:
            i, j = j, i
        mi, mj = mass[i], mass[j]
        new = ((mi + mass) * M[i] + (mj + mass) * M[j] - mass * M[i, j]) / np.maximum(
            mi + mj + mass, _TINY
        )
        active[j] = False
        new[~active] = np.inf
        new = np.nan_to_num(new, nan=0.0, posinf=np.inf)
        M[i, :] = new
        M[:, i] = new
        M[i, i] = np.inf
        M[j, :] = np.inf
        M[:, j] = np.inf
        mass[i] = mi + mj
        mass[j] = 0.0
        labels[labels == j] = i
    _, out = np.unique(labels, return_inverse=True)
    return out.ravel()


def weighted_medoid(D, w, members) -> int:
    sub = np.asarray(D)[np.ix_(members, members)]
    return int(members[np.argmin(np.asarray(w)[members] @ sub)])


def pam_objective(D, w, medoids) -> float:
    return float(np.asarray(w) @ np.asarray(D)[:, medoids].min(axis=1))


def weighted_pam(D, w, medoids, seed: int = 0, max_swaps: int = 10_000):
    """Swap phase of PAM on the weighted objective sum_i w_i d(i, medoid).

    Each pass applies the single best improving (medoid, non-medoid) swap.
    Equal-gain swaps are resolved by a seeded ordering of the candidates.
    Returns (labels, medoids) with labels indexing into ``medoids``.
    """
    D = np.asarray(D, dtype=float)
    w = np.asarray(w, dtype=float)
    n = D.shape[0]
    medoids = list(medoids)
    k = len(medoids)
    order = np.random.default_rng(seed).permutation(n)
    for _ in range(max_swaps):
        Dm = D[:, medoids]
        near = np.argmin(Dm, axis=1)
        d1 = Dm[np.arange(n), near]
        if k > 1:
            d2 = np.partition(Dm, 1, axis=1)[:, 1]
        else:
            d2 = np.full(n, np.inf)
        cost = float(w @ d1)
        cand = order[~np.isin(order, medoids)]
        if cand.size == 0:
            break
        dh = D[:, cand]
        best_cost, best = cost, None
        for pos in range(k):
            base = np.where(near == pos, d2, d1)
            new = w @ np.minimum(base[:, None], dh)
            j = int(np.argmin(new))
            if new[j] < best_cost - 1e-12 * max(1.0, abs(cost)):
                best_cost, best = float(new[j]), (pos, int(cand[j]))
        if best is None:
            break
        medoids[best[0]] = best[1]
    labels = np.argmin(D[:, medoids], axis=1)
    return labels, np.array(medoids)


def init_partition(D, w, k: int, seed: int = 0, return_medoids: bool = False):
    """Ward start refined by weighted PAM, on rows with duplicates collapsed."""
    D = np.asarray(D)
    w = np.asarray(w, dtype=float)
    reps, group, gw = collapse_duplicates(D, w)
    if k < 1 or k > len(reps):
        raise ValueError(
            f"cannot form {k} clusters from {len(reps)} distinct sequences"
        )
    Du = D[np.ix_(reps, reps)]
    start = ward_cut(Du, gw, k)
    medoids = [weighted_medoid(Du, gw, np.flatnonzero(start == c)) for c in range(k)]
    labels, med = weighted_pam(Du, gw, medoids, seed=seed)
    full = labels[group]
    if return_medoids:
        return full, reps[med]
    return full
