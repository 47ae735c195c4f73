"""Hamming kernels and closed-form normalising constants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("scalar", "perCluster", "perTime", "perClusterPerTime")


@dataclass(frozen=True)
class PrecisionStructure:
    """Precision parameters of the non-noise components.

    ``values`` has shape ``()``, ``(G_est,)``, ``(T,)`` or ``(G_est, T)``
    depending on ``kind``. When ``noise`` is set, an extra component with
    every precision fixed at zero is appended after the estimated ones.
    """

    kind: str
    values: np.ndarray
    n_components: int
    T: int
    noise: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown precision kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        expected = {
            "scalar": (),
            "perCluster": (self.n_components,),
            "perTime": (self.T,),
            "perClusterPerTime": (self.n_components, self.T),
        }[self.kind]
        if vals.shape != expected:
            raise ValueError(
                f"{self.kind} precision needs shape {expected}, got {vals.shape}"
            )
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("precisions must be finite and nonnegative")
        object.__setattr__(self, "values", vals)

    def expanded(self) -> np.ndarray:
        """(G_est [+1 noise], T) matrix of per-component, per-time precisions."""
        G, T = self.n_components, self.T
        if self.kind == "scalar":
            lam = np.full((G, T), float(self.values))
        elif self.kind == "perCluster":
            lam = np.repeat(self.values[:, None], T, axis=1)
        elif self.kind == "perTime":
            lam = np.repeat(self.values[None, :], G, axis=0)
        else:
            lam = self.values.copy()
        if self.noise:
            lam = np.vstack([lam, np.zeros((1, T))])
        return lam


def hamming(a, b) -> int:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def weighted_hamming(s, theta, lam) -> float:
    s, theta, lam = np.asarray(s), np.asarray(theta), np.asarray(lam, dtype=float)
    if s.shape != theta.shape or lam.shape != s.shape:
        raise ValueError("sequence, centre and precision lengths differ")
    if np.any(lam < 0):
        raise ValueError("precisions must be nonnegative")
    return float(lam[s != theta].sum())


def pairwise_matrix(states, block: int = 256) -> np.ndarray:
    """n x n Hamming distance matrix, computed in row blocks."""
    S = np.asarray(states)
    n = S.shape[0]
    D = np.empty((n, n), dtype=np.int32)
    for a in range(0, n, block):
        chunk = S[a : a + block]
        D[a : a + block] = (chunk[:, None, :] != S[None, :, :]).sum(axis=2)
    return D


def write_distance_csv(path, D, ids) -> None:
    with open(path, "w") as fh:
        fh.write("," + ",".join(ids) + "\n")
        for i, row in zip(ids, np.asarray(D)):
            fh.write(i + "," + ",".join(str(int(x)) for x in row) + "\n")


def _check_v(v):
    if int(v) != v or v < 2:
        raise ValueError(f"alphabet size must be an integer >= 2, got {v}")


def log_psi_hamming(lam: float, T: int, v: int) -> float:
    """log of ((v-1) exp(-lam) + 1)^T."""
    _check_v(v)
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not lam >= 0:
        raise ValueError(f"precision must be >= 0, got {lam}")
    return T * float(np.log1p((v - 1) * np.exp(-lam)))


def log_psi_weighted(lam_t, v: int) -> float:
    """Sum over t of log((v-1) exp(-lam_t) + 1)."""
    _check_v(v)
    lam_t = np.asarray(lam_t, dtype=float)
    if np.any(lam_t < 0):
        raise ValueError("precisions must be nonnegative")
    return float(np.log1p((v - 1) * np.exp(-lam_t)).sum())


def log_psi_rows(lam: np.ndarray, v: int) -> np.ndarray:
    """Row-wise log normalising constants of an expanded precision matrix."""
    return np.log1p((v - 1) * np.exp(-np.asarray(lam, dtype=float))).sum(axis=-1)


def enumerate_log_psi(lam_t, v: int, theta=None, max_size: int = 10**7) -> float:
    """Brute-force log normalising constant over all v^T sequences."""
    lam_t = np.asarray(lam_t, dtype=float)
    T = lam_t.size
    total = v**T
    if total > max_size:
        raise ValueError(f"v^T = {total} exceeds the enumeration limit {max_size}")
    theta = np.zeros(T, dtype=int) if theta is None else np.asarray(theta)
    exponents = np.empty(total)
    chunk = 1 << 16
    for a in range(0, total, chunk):
        idx = np.arange(a, min(a + chunk, total))
        seqs = np.stack(np.unravel_index(idx, (v,) * T), axis=1)
        exponents[a : a + len(idx)] = -((seqs != theta) * lam_t).sum(axis=1)
    m = exponents.max()
    return float(m + np.log(np.exp(exponents - m).sum()))
