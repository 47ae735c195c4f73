"""Draw sequences from exponential-distance mixtures under the Hamming distance."""

from __future__ import annotations

import numpy as np

from .seqdata import Alphabet, SequenceDataset, from_arrays


def sample_edm(theta, lam, v: int, n: int, rng) -> np.ndarray:
    """n draws from an EDM with centre ``theta`` and per-time precision ``lam``.

    Under the Hamming distance the density factorises over time points:
    position t equals theta_t with probability 1 / ((v-1) exp(-lam_t) + 1)
    and is otherwise uniform over the remaining v-1 states.
    """
    theta = np.asarray(theta)
    T = theta.size
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (T,))
    keep = 1.0 / ((v - 1) * np.exp(-lam) + 1.0)
    match = rng.random((n, T)) < keep
    shift = rng.integers(1, v, size=(n, T))
    return np.where(match, theta, (theta + shift) % v)


def random_centres(G: int, T: int, v: int, rng, min_distance: int = 0) -> np.ndarray:
    """G random central sequences pairwise at least ``min_distance`` apart."""
    for _ in range(10_000):
        th = rng.integers(0, v, size=(G, T))
        d = (th[:, None, :] != th[None, :, :]).sum(axis=2)
        if G < 2 or d[np.triu_indices(G, 1)].min() >= min_distance:
            return th
    raise RuntimeError("could not draw sufficiently separated centres")


def simulate_mixture(
    n: int,
    T: int,
    v: int,
    G: int,
    lam=2.0,
    tau=None,
    seed: int = 0,
    thetas=None,
    min_distance: int | None = None,
):
    """Simulate a Hamming EDM mixture without noise.

    ``lam`` is a scalar, a length-G vector or a G x T array. Returns the
    dataset (labels A, B, ...), the true labels and the centres.
    """
    rng = np.random.default_rng(seed)
    if thetas is None:
        md = T // 2 if min_distance is None else min_distance
        thetas = random_centres(G, T, v, rng, md)
    thetas = np.asarray(thetas)
    lam = np.broadcast_to(np.asarray(lam, dtype=float).reshape(
        (-1, 1) if np.ndim(lam) == 1 else np.shape(lam)), (G, T))
    tau = np.full(G, 1.0 / G) if tau is None else np.asarray(tau, dtype=float)
    labels = rng.choice(G, size=n, p=tau)
    states = np.empty((n, T), dtype=int)
    for g in range(G):
        idx = np.flatnonzero(labels == g)
        states[idx] = sample_edm(thetas[g], lam[g], v, idx.size, rng)
    alphabet = Alphabet(tuple(chr(ord("A") + j) for j in range(v)))
    seqs = [alphabet.decode(row) for row in states]
    ds = from_arrays(seqs, alphabet=alphabet)
    return ds, labels, thetas


def with_covariates(ds: SequenceDataset, covariates: dict) -> SequenceDataset:
    """Attach covariate columns to a simulated dataset."""
    seqs = [ds.sequence_labels(i) for i in range(ds.n)]
    return from_arrays(seqs, weights=ds.raw_weights, covariates=covariates,
                       ids=ds.ids, time_labels=ds.time_labels, alphabet=ds.alphabet)
