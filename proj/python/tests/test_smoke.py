import math

import numpy as np
import pytest

import couplekit as ck


def config(**overrides):
    base = {
        "schema_version": ck.SCHEMA_VERSION,
        "seed": 3,
        "population": {"n": 40, "p": 2, "family": "linear"},
        "marginal": {"family": "uniform"},
        "k": 4,
        "designs": [{"coupling": "lhs"}],
        "replications": 300,
        "table_draws": 1024,
    }
    base.update(overrides)
    return base


def test_closed_forms():
    assert ck.dispersion_closed_form("lhs", 4, "hist") == 1.0
    assert ck.dispersion_closed_form("rs", 5, "cyclic") == -4.0
    assert ck.worst_case_rate("rs", 5)["rate"] == 5.0
    assert ck.worst_case_rate("lhs", 4)["rate"] == pytest.approx(4.0 / 3.0)


def test_matching_line():
    x = np.array([[0.0], [0.1], [5.0], [5.1]])
    m = ck.match_k_tuples(x, 2, seed=1, standardize=False)
    assert m["group"][0] == m["group"][1]
    assert m["group"][2] == m["group"][3]
    assert m["discrepancy"] == pytest.approx(0.04)


def test_antithetic_and_lhs_samples():
    u = ck.sample_uniforms("av", 2, seed=5)
    assert u[0, 0] + u[1, 0] == pytest.approx(1.0)
    lhs = ck.sample_uniforms("lhs", 5, m=2, seed=9)
    for j in range(2):
        assert sorted(np.floor(lhs[:, j] * 5).astype(int)) == [0, 1, 2, 3, 4]


def test_simulate_report():
    report = ck.simulate(config())
    assert report["schema_version"] == ck.SCHEMA_VERSION
    rows = report["designs"]
    assert [r["coupling"] for r in rows] == ["LatinHypercube", "IID"]
    assert rows[1]["baseline"]
    assert rows[0]["predicted_efficiency"] is not None
    assert 0.0 <= rows[0]["coverage"] <= 1.0
    assert ck.simulate(config()) == report


def test_design_rows():
    rows = ck.design(config())
    assert len(rows) == 40
    groups = {}
    for r in rows:
        groups.setdefault(r["group"], []).append(r["d1"])
    assert all(len(v) == 4 for v in groups.values())
    # LHS: one treatment per quarter of [0, 1] in every group.
    for v in groups.values():
        assert sorted(math.floor(d * 4) for d in v) == [0, 1, 2, 3]


def test_sweep_and_analyze():
    rows = ck.sweep(config(sweep={"k_grid": [2, 4], "dispersion_reps": 1000}))
    assert [r["k"] for r in rows] == [2.0, 4.0]
    report = ck.analyze(config(sweep={"dispersion_reps": 1000}))
    assert report["designs"][0]["status"] == "ok"


def test_transport_fit():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    fit = ck.fit_semidiscrete(points, np.full(4, 0.25), seed=2, mc_samples=40000)
    assert fit["converged"]
    assert fit["potentials"][0] == 0.0


def test_errors():
    with pytest.raises(ck.ValidationError, match="schema_version"):
        ck.simulate({"marginal": {"family": "uniform"}})
    with pytest.raises(ValueError, match="k=3"):
        ck.design(config(designs=[{"coupling": "lhs", "k": 3}]))
    with pytest.raises(ck.NumericalError):
        ck.fit_semidiscrete(np.array([[0.0, 0.0], [3.0, 0.0], [5.0, 4.0]]), np.array([0.8, 0.1, 0.1]), mc_samples=2000, tol=1e-9)
