"""Ladder reconstruction machinery: specs, reports, diagnostics."""

import numpy as np
import pytest

from tumblerec.errors import (AdmissibilityError, NumericsError, ProbeError)
from tumblerec.fields import constant_model
from tumblerec.measurement import MeasurementResult, measure
from tumblerec.probes import build_k_probe, build_sigma_probe, c_phipsi
from tumblerec.reconstruction import (LadderReport, LadderSpec,
                                      fit_tail_exponent, k_geometry_factor,
                                      lemma_diagnostics, order_shares,
                                      recover_line_integral,
                                      recover_sigma_point, run_k_ladder,
                                      run_sigma_ladder)


def test_ladder_spec_validation():
    LadderSpec(eps_values=(0.3, 0.2, 0.1))
    with pytest.raises(ProbeError):
        LadderSpec(eps_values=())
    with pytest.raises(ProbeError):
        LadderSpec(eps_values=(0.1, 0.2))
    with pytest.raises(ProbeError):
        LadderSpec(eps_values=(0.2, 0.2))
    with pytest.raises(ProbeError):
        LadderSpec(eps_values=(0.2, -0.1))


def test_recover_line_integral_inverts_measure(model_sigma_const, fast_spec):
    probe = build_sigma_probe([0, 0, 0], [0, 0, 1], t_m=0.5, eps=0.1)
    res = measure(model_sigma_const, probe, spec=fast_spec)
    L = recover_line_integral(res, probe)
    assert L == pytest.approx(0.15, rel=0.05)
    with pytest.raises(NumericsError):
        recover_line_integral(0.0, probe)
    with pytest.raises(NumericsError):
        recover_line_integral(-1e-3, probe)
    # plain floats are accepted alongside MeasurementResult
    assert recover_line_integral(res.total, probe) == pytest.approx(L)


def test_sigma_ladder_report_shape(model_sigma_const, fast_spec):
    ladder = LadderSpec(eps_values=(0.2, 0.1, 0.05))
    rep = run_sigma_ladder(model_sigma_const, [0, 0, 0], [0, 0, 1], 0.5,
                           ladder, spec=fast_spec)
    assert rep.kind == "sigma-line-integral"
    assert len(rep.rungs) == 3
    assert rep.final == rep.rungs[-1]["estimate"]
    assert np.all(np.diff(rep.eps()) < 0)
    # deviation from the exact value 0.15 shrinks down the ladder
    dev = np.abs(rep.estimates() - 0.15)
    assert np.all(np.diff(dev) < 0)
    assert rep.final == pytest.approx(0.15, rel=0.03)
    assert not rep.failures


def test_sigma_point_central_difference(model_sigma_const, fast_spec):
    ladder = LadderSpec(eps_values=(0.1, 0.05))
    est, lo, hi = recover_sigma_point(model_sigma_const, [0, 0, 0], [0, 0, 1],
                                      0.5, ladder, spec=fast_spec)
    assert est == pytest.approx(0.3, rel=0.05)
    assert lo.target["t_m"] < hi.target["t_m"]
    with pytest.raises(ProbeError):
        recover_sigma_point(model_sigma_const, [0, 0, 0], [0, 0, 1], 0.5,
                            ladder, h=0.6, spec=fast_spec)


def test_partial_ladder_records_failures(model_sigma_const, fast_spec):
    # eps = 0.8 makes eta = 0.64 > t_m = 0.5: the rung must fail
    ladder = LadderSpec(eps_values=(0.8, 0.1))
    with pytest.raises(ProbeError):
        run_sigma_ladder(model_sigma_const, [0, 0, 0], [0, 0, 1], 0.5, ladder,
                         spec=fast_spec)
    rep = run_sigma_ladder(model_sigma_const, [0, 0, 0], [0, 0, 1], 0.5,
                           ladder, spec=fast_spec, partial=True)
    assert len(rep.rungs) == 1
    assert len(rep.failures) == 1
    assert "ProbeError" in rep.failures[0]["error"]
    # all rungs failing raises even in partial mode
    with pytest.raises(NumericsError):
        run_sigma_ladder(model_sigma_const, [0, 0, 0], [0, 0, 1], 0.5,
                         LadderSpec(eps_values=(0.9, 0.8)), spec=fast_spec,
                         partial=True)


def test_k_geometry_factor_limits():
    """g(eps) stays near 1 and tends to 1 as eps -> 0.

    The expansion parameter is eps / |z_hat| ~ eps^(1 - alpha) / lambda, so
    alpha near 3/4 makes the limit visible at computable eps.
    """
    vals = []
    for eps in (0.05, 1e-3, 1e-5):
        p = build_k_probe([0, 0, 0], [0, 0, 1], [1, 0, 0], lam=0.65,
                          alpha=0.76, eps=eps)
        vals.append(k_geometry_factor(p))
    vals = np.array(vals)
    assert np.all((0.8 < vals) & (vals < 1.2))
    assert abs(vals[-1] - 1.0) < abs(vals[0] - 1.0)
    assert vals[-1] == pytest.approx(1.0, abs=0.01)


def test_k_ladder_requires_admissible_model(fast_spec):
    big = constant_model(0.5, 1.0)
    with pytest.raises(AdmissibilityError):
        run_k_ladder(big, [0, 0, 0], [0, 0, 1], [1, 0, 0], 0.5, 0.9,
                     LadderSpec(eps_values=(0.2,)), spec=fast_spec)


def test_k_ladder_recovers_constant(model_k_const, fast_spec):
    # lambda = 0.6, alpha = 0.78 keeps the psi support separated from the
    # ballistic image of phi at these eps, so order 0 contributes nothing
    ladder = LadderSpec(eps_values=(0.3, 0.2), tail_samples=2000, seed=1)
    rep = run_k_ladder(model_k_const, [0, 0, 0], [0, 0, 1], [1, 0, 0],
                       0.6, 0.78, ladder, spec=fast_spec)
    assert rep.kind == "kernel-point"
    assert rep.final == pytest.approx(0.01, rel=0.1)
    for r in rep.rungs:
        assert 0.0 < r["geometry_factor"] < 1.2
        assert r["estimate"] == pytest.approx(r["total"] / r["geometry_factor"])


def test_order_shares_and_diagnostics(model_k_const, fast_spec):
    ladder = LadderSpec(eps_values=(0.3, 0.25, 0.2), tail_samples=2000, seed=1)
    rep = run_k_ladder(model_k_const, [0, 0, 0], [0, 0, 1], [1, 0, 0],
                       0.5, 0.9, ladder, spec=fast_spec)
    shares = order_shares(rep.rungs[0])
    assert set(shares) == {"order0", "order1", "tail"}
    assert sum(shares.values()) == pytest.approx(1.0, rel=1e-12)
    d = lemma_diagnostics(rep)
    assert len(d["shares"]) == 3
    assert all(d["tail_within_bound"])
    assert d["tail_exponent_reference"] == pytest.approx(0.6)
    if d["tail_exponent"] is not None:
        slope, tails = fit_tail_exponent(rep)
        assert slope == d["tail_exponent"]
        assert len(tails) == 3


def test_fit_tail_exponent_needs_positive_tails():
    rungs = ({"eps": 0.2, "estimate": 1.0, "total": 1.0, "stderr": 0.0,
              "tail_estimate": 0.0, "tail_bound": 0.0, "per_order": [],
              "probe": {}},) * 2
    rep = LadderReport(kind="sigma-line-integral", target={}, rungs=rungs,
                       final=1.0, richardson=None, monotone=True)
    with pytest.raises(NumericsError):
        fit_tail_exponent(rep)
