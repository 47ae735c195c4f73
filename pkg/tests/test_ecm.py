import json
import math

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from medseq import ecm, seqdata
from medseq.distance import PrecisionStructure
from medseq.ecm import Control, ModelSpec
from medseq.edm import ComponentParams
from medseq.gating import GatingConfig, GatingParams
from medseq.initialization import init_partition
from medseq.simulate import simulate_mixture

from helpers import battery, random_dataset, scalar_log_density


def hand_params():
    comp = ComponentParams(
        np.array([[0, 0, 1], [2, 1, 1]]),
        PrecisionStructure("perCluster", np.array([0.8, 1.7]), 2, 3, noise=True),
    )
    gp = GatingParams("free", 3, noise=True, tau=np.array([0.5, 0.3, 0.2]), tau0=0.2)
    return ecm.MixtureParams(comp, gp)


def test_e_step_matches_scalar_oracle():
    S = [[0, 0, 1], [2, 1, 1], [1, 1, 1], [0, 2, 2], [2, 0, 1]]
    ds = seqdata.from_arrays([[str(x) for x in r] for r in S], weights=[1, 2, 1, 0.5, 3])
    p = hand_params()
    Z, ll = ecm.e_step(ds, p)
    lam = [0.8, 1.7]
    tau = [0.5, 0.3, 0.2]
    total = 0.0
    for i, s in enumerate(S):
        dens = [tau[g] * math.exp(scalar_log_density(s, p.components.thetas[g], [lam[g]] * 3, 3))
                for g in range(2)]
        dens.append(tau[2] * 3.0**-3)
        tot = sum(dens)
        np.testing.assert_allclose(Z[i], np.array(dens) / tot, rtol=1e-12, atol=1e-15)
        total += ds.weights[i] * math.log(tot)
    assert ll == pytest.approx(total, rel=1e-12)


def test_e_step_weight_neutral():
    S = [list("ABA"), list("BBA"), list("AAA")]
    a = seqdata.from_arrays(S)
    b = seqdata.from_arrays(S, weights=[5, 0.1, 2])
    p = hand_params()
    np.testing.assert_array_equal(ecm.e_step(a, p)[0], ecm.e_step(b, p)[0])


def test_e_step_identical_components_and_limit():
    ds = seqdata.from_arrays([list("AB"), list("BA"), list("BB")])
    comp = ComponentParams(np.array([[0, 1]] * 3),
                           PrecisionStructure("scalar", np.float64(1.0), 3, 2))
    gp = GatingParams("equal", 3, tau=np.full(3, 1 / 3))
    Z, _ = ecm.e_step(ds, ecm.MixtureParams(comp, gp))
    np.testing.assert_allclose(Z, 1 / 3)
    comp = ComponentParams(np.array([[0, 0, 0, 0], [1, 1, 1, 1]]),
                           PrecisionStructure("scalar", np.float64(30.0), 2, 4))
    ds = seqdata.from_arrays([list("AAAA"), list("BBBB")])
    Z, _ = ecm.e_step(ds, ecm.MixtureParams(comp, GatingParams("equal", 2, tau=np.full(2, 0.5))))
    assert Z[0, 0] > 1 - 1e-12


def test_aitken():
    l = [-10 - 2.0**-m for m in range(40)]
    conv, linf = ecm.aitken_check(l[5], l[6], l[7], 1e-8)
    assert linf == pytest.approx(-10, abs=1e-12)
    assert not conv
    conv, _ = ecm.aitken_check(l[30], l[31], l[32], 1e-8)
    assert conv
    assert ecm.aitken_check(-3.0, -3.0, -3.0, 1e-8)[0]
    assert not ecm.aitken_check(-10.0, -9.0, -7.0, 1e-8)[0]
    assert ecm.aitken_check(-4.0, -4.0, None, 1e-8)[0]
    assert not ecm.aitken_check(-5.0, -4.0, None, 1e-8)[0]


def test_init_noise():
    np.testing.assert_allclose(ecm.init_noise([[1, 0]], 0.1), [[0.9, 0, 0.1]])
    np.testing.assert_allclose(ecm.init_noise([[0, 1]], 1e-12), [[0, 1, 0]], atol=1e-11)
    Z = ecm.init_noise(np.eye(3)[[0, 2, 1, 1]], 0.05)
    np.testing.assert_allclose(Z.sum(axis=1), 1)
    np.testing.assert_allclose(Z[:, -1], 0.05)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            ecm.init_noise([[1.0]], bad)


@pytest.mark.parametrize(
    "model_type,G,ok",
    [("CC", 1, True), ("CU", 1, True), ("CCN", 1, True), ("UC", 1, False),
     ("UU", 1, False), ("UCN", 1, False), ("UCN", 2, False), ("UUN", 2, False),
     ("CUN", 2, True), ("UUN", 3, True)],
)
def test_admissibility(model_type, G, ok):
    if ok:
        ModelSpec(model_type, G)
    else:
        with pytest.raises(ecm.InadmissibleSpecError):
            ModelSpec(model_type, G)


def test_alias_message_and_covariate_rules():
    with pytest.raises(ecm.InadmissibleSpecError, match="equivalent to CCN"):
        ModelSpec("UCN", 2)
    cov = GatingConfig("covariate", ("x",))
    with pytest.raises(ecm.InadmissibleSpecError):
        ModelSpec("CCN", 2, cov)
    ModelSpec("CCN", 2, GatingConfig("covariate", ("x",), "GN"))
    with pytest.raises(ecm.InadmissibleSpecError):
        ModelSpec("CC", 1, cov)


def test_single_component_closed_form():
    ds = random_dataset(3, n=60, T=7, v=4, G=1, lam=1.3, weighted=True)
    f = ecm.fit(ds, ModelSpec("CC", 1))
    assert f.converged and f.iterations <= 2
    counts = np.stack([ds.weights @ (ds.states == j) for j in range(4)], axis=1)
    np.testing.assert_array_equal(f.params.components.thetas[0], counts.argmax(axis=1))
    d = (ds.states != f.params.components.thetas[0]).sum(axis=1)
    dbar = ds.weights @ d / ds.n
    lam = math.log(3) + math.log(ds.T / dbar - 1)
    assert float(f.params.components.precision.values) == pytest.approx(lam, rel=1e-12)


def test_pure_noise_model():
    ds = random_dataset(1, n=30, T=5, v=3)
    f = ecm.fit(ds, ModelSpec("CCN", 1))
    assert f.loglik == pytest.approx(-30 * 5 * math.log(3))
    assert f.n_params == 0
    assert f.bic == pytest.approx(-2 * 30 * 5 * math.log(3))


@pytest.mark.parametrize("case", range(0, 150, 3))
def test_monotone_trace(case):
    cases = battery(seeds=(1,))
    ds, spec = cases[case % len(cases)]
    f = ecm.fit(ds, spec, diagnostics=False)
    assert np.all(np.diff(f.loglik_trace) >= -1e-8)
    np.testing.assert_allclose(f.Z.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_array_equal(f.map, f.Z.argmax(axis=1))


@pytest.mark.parametrize("model_type", ["CC", "UUN", "CUN"])
def test_weight_scaling_invariance(model_type):
    ds = random_dataset(5, n=50, T=6, v=3, G=3, weighted=True, n_cov=1)
    gat = GatingConfig("covariate", ("x1",), "GN") if model_type != "CC" else GatingConfig()
    spec = ModelSpec(model_type, 3, gat)
    a = ecm.fit(ds, spec)
    b = ecm.fit(ds.with_weights(ds.raw_weights * 37.5), spec)
    np.testing.assert_array_equal(a.params.components.thetas, b.params.components.thetas)
    np.testing.assert_allclose(a.params.components.precision.values,
                               b.params.components.precision.values, atol=1e-8)
    np.testing.assert_allclose(a.Z, b.Z, atol=1e-8)


@pytest.mark.parametrize("model_type,cov", [("UU", False), ("UCN", True), ("CU", True)])
def test_duplicate_invariance(model_type, cov):
    base = random_dataset(8, n=25, T=4, v=2, G=2, lam=1.5, weighted=True, n_cov=1 if cov else 0)
    # replicate rows with split weights so the data contain many duplicates
    idx = np.r_[np.arange(25), np.arange(0, 25, 2)]
    w = base.raw_weights[idx].copy()
    w[25:] *= 0.5
    w[np.arange(0, 25, 2)] *= 0.5
    seqs = [base.sequence_labels(i) for i in idx]
    covs = {"x1": base.covariates[idx, 0]} if cov else {}
    ds = seqdata.from_arrays(seqs, weights=w, covariates=covs, alphabet=base.alphabet)
    gat = GatingConfig("covariate", ("x1",)) if cov else GatingConfig()
    spec = ModelSpec(model_type, 3, gat)
    raw = ecm.fit(ds, spec, aggregate=False)
    agg = ecm.fit(ds, spec, aggregate=True)
    np.testing.assert_array_equal(raw.params.components.thetas, agg.params.components.thetas)
    np.testing.assert_allclose(raw.params.components.precision.values,
                               agg.params.components.precision.values, atol=1e-8)
    np.testing.assert_allclose(raw.Z, agg.Z, atol=1e-8)
    assert raw.loglik == pytest.approx(agg.loglik, abs=1e-8)


def test_aggregated_loglik_identity():
    ds = random_dataset(2, n=40, T=3, v=2, weighted=True)
    agg, _ = seqdata.aggregate_duplicates(ds)
    assert agg.n < ds.n
    p = hand_params()
    comp = ComponentParams(np.array([[0, 0, 1], [1, 1, 1]]), p.components.precision)
    pr = ecm.MixtureParams(comp, p.gating)
    assert ecm.e_step(ds, pr)[1] == pytest.approx(ecm.e_step(agg, pr)[1], abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_restricted_cem_reproduces_pam(seed):
    ds = random_dataset(seed, n=40, T=8, v=3, G=3, lam=1.0, weighted=True)
    from medseq.distance import pairwise_matrix

    D = pairwise_matrix(ds.states)
    labels, med = init_partition(D, ds.weights, 3, seed=seed, return_medoids=True)
    cem_labels, cem_med = ecm.restricted_cem(ds, med)
    np.testing.assert_array_equal(cem_labels, labels)


def test_simulation_recovery():
    ds, truth, _ = simulate_mixture(300, 20, 4, 3, 2.0, seed=0)
    f = ecm.fit(ds, ModelSpec("CC", 3, control=Control(seed=0)))
    assert adjusted_rand_score(truth, f.map) > 0.9


def test_empty_component_reported():
    ds = random_dataset(0, n=20)
    Z = np.column_stack([np.ones(20), np.zeros(20)])
    with pytest.raises(ecm.EmptyComponentError, match="component 2"):
        ecm.fit(ds, ModelSpec("CC", 2), init_z=Z)


def test_too_many_components():
    ds = seqdata.from_arrays([list("AB"), list("AB"), list("BA")])
    with pytest.raises(ecm.InadmissibleSpecError, match="distinct"):
        ecm.fit(ds, ModelSpec("CC", 3))


def test_equal_gating_with_noise():
    ds = random_dataset(2, n=60, G=2, lam=2.0)
    f = ecm.fit(ds, ModelSpec("CCN", 3, GatingConfig("equal")))
    tau = f.params.gating.tau
    assert tau[0] == pytest.approx(tau[1])
    assert tau.sum() == pytest.approx(1)
    assert f.n_params == 2 * 6 * 2 + 1 + 1


def test_json_round_trip(tmp_path):
    ds = random_dataset(6, n=50, T=6, v=3, G=3, weighted=True, n_cov=2)
    f = ecm.fit(ds, ModelSpec("UUN", 4, GatingConfig("covariate", ("x1", "x2"))))
    path = tmp_path / "m.json"
    f.to_json(path)
    g = ecm.load_model(path, ds)
    assert g.wdbs == f.wdbs and g.wasw == f.wasw
    assert g.bic == f.bic
    np.testing.assert_array_equal(g.Z, f.Z)
    doc = json.loads(path.read_text())
    assert doc["theta"][0] == f.theta_labels()[0]
    assert doc["labels"][-1] == "Noise"


def test_seeded_determinism(tmp_path):
    ds = random_dataset(7, n=50, T=6, v=3, G=3, weighted=True, n_cov=1)
    spec = ModelSpec("UCN", 4, GatingConfig("covariate", ("x1",)), Control(seed=11))
    a, b = ecm.fit(ds, spec), ecm.fit(ds, spec)
    assert a.to_json() == b.to_json()
    a.write_z_csv(tmp_path / "a.csv")
    b.write_z_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_init_labels_and_z_override():
    ds = random_dataset(3, n=30, G=2, lam=2.0)
    labels = np.arange(30) % 2
    f = ecm.fit(ds, ModelSpec("CC", 2), init_labels=labels)
    g = ecm.fit(ds, ModelSpec("CC", 2), init_z=np.eye(2)[labels])
    np.testing.assert_allclose(f.Z, g.Z)
    with pytest.raises(ValueError):
        ecm.fit(ds, ModelSpec("CC", 2), init_z=np.ones((3, 2)))
