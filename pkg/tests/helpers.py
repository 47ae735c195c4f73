"""Shared fixtures builders and independent reference implementations."""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np

from medseq import seqdata
from medseq.simulate import simulate_mixture, with_covariates

DATA = Path(__file__).parent / "data"
# criterion number -> "PASS/FAIL" line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}
MVAD_COVARIATES = ["Catholic", "FMPR", "Funemp", "GCSE5eq", "Gender", "Livboth"]


def load_mvad(covariates=MVAD_COVARIATES):
    ds = seqdata.parse_csv(
        DATA / "mvad.csv",
        "Jul.93:Jun.99",
        id_column="id",
        weight_column="weight",
        covariate_columns=list(covariates),
    )
    return seqdata.trim_time_range(ds, 2, ds.T - 1)


def random_dataset(seed, n=40, T=6, v=3, G=2, lam=1.0, weighted=False, n_cov=0):
    """Loosely clustered data with optional weights and binary/numeric covariates."""
    rng = np.random.default_rng([seed, 99])
    ds, _, _ = simulate_mixture(n, T, v, G, lam, seed=seed, min_distance=0)
    covs = {}
    for j in range(n_cov):
        covs[f"x{j + 1}"] = rng.integers(0, 2, n) if j % 2 == 0 else rng.normal(size=n).round(3)
    ds = with_covariates(ds, covs)
    if weighted:
        ds = ds.with_weights(rng.uniform(0.2, 3.0, n))
    return ds


def naive_hamming(a, b):
    return sum(1 for x, y in zip(a, b) if x != y)


def all_sequences(T, v):
    return [np.array(s) for s in itertools.product(range(v), repeat=T)]


def scalar_log_density(s, theta, lam_t, v):
    """Log EDM density from its definition, normalised by explicit summation."""
    T = len(s)
    log_terms = []
    for sigma in itertools.product(range(v), repeat=T):
        log_terms.append(-sum(lam_t[t] for t in range(T) if sigma[t] != theta[t]))
    m = max(log_terms)
    log_psi = m + math.log(sum(math.exp(x - m) for x in log_terms))
    return -sum(lam_t[t] for t in range(T) if s[t] != theta[t]) - log_psi


def golden_max(f, lo, hi, tol=1e-11):
    """Golden-section maximisation of a unimodal function on [lo, hi]."""
    r = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - r * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + r * (b - a)
            fd = f(d)
    x = (a + b) / 2
    # boundary maxima of concave profiles
    return max([lo, x, hi], key=f)


def literal_count(model_type, G, v_t, mode, r, ng):
    """Parameter count written out per model type, row by row."""
    T = len(v_t)
    c = sum(v - 1 for v in v_t)
    ind = 1 if G > 1 else 0
    table = {
        "CC": G * c + 1,
        "UC": G * c + G,
        "CU": G * c + T,
        "UU": G * c + G * T,
        "CCN": (G - 1) * c + ind,
        "UCN": (G - 1) * c + (G - 1),
        "CUN": (G - 1) * c + ind * T,
        "UUN": (G - 1) * c + (G - 1) * T,
    }
    k = table[model_type]
    noise = model_type.endswith("N")
    if mode == "covariate":
        k += (r + 1) * (G - 2) + 1 if noise and ng == "NGN" else (r + 1) * (G - 1)
    elif mode == "free":
        k += G - 1
    elif noise and G > 1:
        k += 1
    return k


def battery(seeds=(0,), G_values=(2, 3, 4)):
    """(dataset, spec) pairs over every type, G, weighting, covariate and
    noise-gating combination that is admissible."""
    from medseq.ecm import Control, InadmissibleSpecError, ModelSpec
    from medseq.edm import MODEL_TYPES, has_noise
    from medseq.gating import GatingConfig

    out = []
    for seed in seeds:
        for weighted in (False, True):
            for with_cov in (False, True):
                ds = random_dataset(seed * 7 + weighted * 2 + with_cov, n=50, T=6, v=3,
                                    G=3, lam=1.2, weighted=weighted, n_cov=2 if with_cov else 0)
                for t in MODEL_TYPES:
                    for G in G_values:
                        if with_cov:
                            ngs = ("GN", "NGN") if has_noise(t) else ("NGN",)
                            gatings = [GatingConfig("covariate", ("x1", "x2"), ng) for ng in ngs]
                        else:
                            gatings = [GatingConfig()]
                        for g in gatings:
                            try:
                                spec = ModelSpec(t, G, g, Control(seed=seed, max_iter=300))
                            except InadmissibleSpecError:
                                continue
                            out.append((ds, spec))
    return out
