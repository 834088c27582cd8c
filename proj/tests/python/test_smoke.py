import numpy as np
import pytest

import fedcausal as fc


def test_truth_and_generation():
    assert fc.scenario_ids() == ["1.1", "1.2", "2.1", "2.2", "2.3"]
    assert fc.true_psi("1.1")["psi"] == pytest.approx(2.5)
    sites = fc.generate("1.1", seed=3, n=800)
    assert sorted(sites) == [0, 1, 2]
    assert sum(len(y) for y, _, _ in sites.values()) == 800
    y, a, x = sites[0]
    assert x.shape == (len(y), 1)
    assert set(np.unique(a)) <= {0, 1}
    again = fc.generate("1.1", seed=3, n=800)
    assert np.array_equal(again[2][0], sites[2][0])


def test_target_only_estimate_matches_aipw_from_same_data():
    sites = fc.generate("1.1", seed=4)
    drt = fc.estimate(sites, "DR-t")
    mr1 = fc.estimate({0: sites[0]}, "MR1")
    assert mr1["psi_hat"] == pytest.approx(drt["psi_hat"], rel=1e-12)
    assert drt["ci_lower"] < drt["psi_hat"] < drt["ci_upper"]


def test_federated_run_equals_in_process(tmp_path):
    sites = fc.generate("2.2", seed=5)
    kw = dict(B=20, seed=7, lambda_grid=[0.0, 2.0])
    local = fc.run(sites, **kw)
    files = fc.run(sites, transport="files", directory=str(tmp_path), **kw)
    assert [r["psi_hat"] for r in local["reports"]] == [r["psi_hat"] for r in files["reports"]]
    assert np.array_equal(local["weights"], files["weights"])
    assert local["mse_curve"] == files["mse_curve"]
    assert files["privacy_findings"] == []
    assert files["messages"] > 0
    assert local["weights"].sum() == pytest.approx(1.0)


def test_errors_carry_codes():
    sites = fc.generate("1.1", seed=6)
    with pytest.raises(fc.FedCausalError) as info:
        fc.estimate(sites, "MR1", measure="rd")
    assert info.value.code == "UnsupportedMeasureForMode"
    with pytest.raises(fc.FedCausalError):
        fc.generate("7.7")
    y, a, x = sites[1]
    with pytest.raises(fc.FedCausalError) as info:
        fc.estimate({1: (y, a, x)}, "MR1")
    assert info.value.code == "MissingTargetSite"


def test_monte_carlo_rows():
    rows = fc.monte_carlo("1.1", M=3, n=300, estimators=["DR-t", "MR1"], misspec=["i"])
    assert [r["estimator"] for r in rows] == ["MR1", "DR-t"] or [r["estimator"] for r in rows] == ["DR-t", "MR1"]
    for r in rows:
        assert r["mse"] == pytest.approx(r["bias"] ** 2 + r["sd"] ** 2 * (r["M"] - 1) / r["M"], abs=1e-10)


def test_simplex_projection():
    w = fc.project_simplex(np.array([0.5, 0.5, -3.0]))
    assert np.allclose(w, [0.5, 0.5, 0.0])
