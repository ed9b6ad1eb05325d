"""Velocity-sphere geometry: charts, quadrature, scattering map, tumble point."""

import numpy as np
import pytest

from tumblerec.errors import ConfigurationError, DomainError, GeometryError
from tumblerec.geometry import (StereographicChart, chart, chart_area_element,
                                domain_thresholds, gauss_nodes, jacobian_S,
                                jacobian_j, normalize, project, scatter_map,
                                solve_tumble_point, sphere_quadrature,
                                unproject, zeta_omega)


def random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_chart_frame_orthonormal(rng):
    for anchor in random_units(rng, 20):
        ch = chart(anchor)
        g = np.array([ch.anchor, ch.f1, ch.f2])
        assert np.allclose(g @ g.T, np.eye(3), atol=1e-12)


def test_project_unproject_roundtrip(rng):
    anchor = normalize([0.3, -0.2, 0.9])
    ch = chart(anchor)
    # avoid the antipode: sample a hemisphere-ish cap around the anchor
    v = random_units(rng, 1000)
    v = np.where((v @ anchor)[:, None] < 0, -v, v)
    y = project(ch, v)
    back = unproject(ch, y)
    assert np.max(np.linalg.norm(back - v, axis=1)) < 1e-9
    assert np.allclose(project(ch, anchor), 0.0)


def test_unproject_always_unit(rng):
    ch = chart([0.0, 0.0, 1.0])
    y = rng.uniform(-5, 5, size=(500, 2))
    v = unproject(ch, y)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)


def test_project_rejects_antipode():
    ch = chart([0.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        project(ch, np.array([0.0, 0.0, -1.0]))


def test_jacobian_j_values():
    ch = chart([0.0, 0.0, 1.0])
    assert jacobian_j(ch, np.array([0.0, 0.0, 1.0])) == pytest.approx(0.25)
    v60 = np.array([np.sqrt(0.75), 0.0, 0.5])  # <v, anchor> = 1/2
    assert jacobian_j(ch, v60) == pytest.approx(8.0 / 9.0, rel=1e-12)
    with pytest.raises(DomainError):
        jacobian_j(ch, np.array([1.0, 0.0, 0.0]))  # equator


def test_chart_area_element_matches_jacobian_near_anchor():
    # at the anchor (y = 0) the true element is 4 and j = 1/4: the product
    # of j with (1+c)^2|c| normalizations agrees with 4/(1+|y|^2)^2 / ...
    assert chart_area_element(np.zeros(2)) == pytest.approx(4.0)


def test_sphere_quadrature_polynomials():
    pts, wts = sphere_quadrature(8)
    assert wts.shape == (2 * 8 * 8,)
    assert np.all(wts > 0)
    assert wts.sum() == pytest.approx(4.0 * np.pi, rel=1e-13)
    # odd moments vanish, second moments = 4 pi / 3 on the diagonal
    assert np.allclose(wts @ pts, 0.0, atol=1e-12)
    second = (wts[:, None, None] * pts[:, :, None] * pts[:, None, :]).sum(0)
    assert np.allclose(second, np.eye(3) * 4.0 * np.pi / 3.0, atol=1e-12)
    with pytest.raises(ConfigurationError):
        sphere_quadrature(1)


def test_scatter_inverse_example():
    # z = e2 - e1 with anchor e1 maps back to (1, e2)
    anchor = np.array([1.0, 0.0, 0.0])
    z = np.array([-1.0, 1.0, 0.0])
    zeta, omega = zeta_omega(anchor, z)
    assert zeta == pytest.approx(1.0)
    assert np.allclose(omega, [0.0, 1.0, 0.0])


def test_scatter_roundtrip(rng):
    anchor = normalize([0.1, 0.9, -0.4])
    v = random_units(rng, 1000)
    keep = np.abs(v @ anchor) > 1e-3  # stay off the inverse's singular set
    v = v[keep]
    s = rng.uniform(0.05, 2.0, size=len(v))
    z = scatter_map(anchor, s, v)
    zeta, omega = zeta_omega(anchor, z)
    assert np.max(np.abs(zeta - s)) < 1e-9
    assert np.max(np.linalg.norm(omega - v, axis=1)) < 1e-9


def test_jacobian_S_finite_difference(rng):
    anchor = np.array([0.0, 0.0, 1.0])
    h = 1e-6
    for _ in range(50):
        v = normalize(rng.normal(size=3))
        if abs(v @ anchor) > 0.999:
            continue
        s = rng.uniform(0.1, 1.5)
        e_a = normalize(np.cross(v, anchor))
        e_b = np.cross(v, e_a)
        cols = [
            (scatter_map(anchor, np.array(s + h), v)
             - scatter_map(anchor, np.array(s - h), v)) / (2 * h),
            (scatter_map(anchor, np.array(s), normalize(v + h * e_a))
             - scatter_map(anchor, np.array(s), normalize(v - h * e_a))) / (2 * h),
            (scatter_map(anchor, np.array(s), normalize(v + h * e_b))
             - scatter_map(anchor, np.array(s), normalize(v - h * e_b))) / (2 * h),
        ]
        num = abs(np.linalg.det(np.array(cols)))
        assert num == pytest.approx(jacobian_S(s, v, anchor), rel=1e-5)


def test_solve_tumble_point_roundtrip(rng):
    x_i = np.array([0.2, -0.1, 0.4])
    v_i = normalize([1.0, 1.0, 0.0])
    for _ in range(25):
        v_hat = random_units(rng, 1)[0]
        if abs(v_hat @ v_i) > 0.95:
            continue
        t_m = rng.uniform(0.2, 0.8)
        lam = rng.uniform(0.2, 0.8)
        s_hat = lam * t_m
        x_m = x_i + s_hat * v_hat + (t_m - s_hat) * v_i
        geo = solve_tumble_point(x_i, v_i, x_m, t_m)
        assert geo.s_hat == pytest.approx(s_hat, abs=1e-10)
        assert np.allclose(geo.v_hat, v_hat, atol=1e-9)
        assert geo.lam == pytest.approx(lam, abs=1e-10)


def test_solve_tumble_point_unreachable():
    with pytest.raises(GeometryError):
        solve_tumble_point([0, 0, 0], [0, 0, 1], [5.0, 0, 0], 0.5)


def test_domain_thresholds_lemma_example():
    # lambda = 0.5, v_hat perpendicular to v_i: c2 = lambda^2 / 4
    t_m, lam = 0.4, 0.5
    x_i = np.zeros(3)
    v_i = np.array([0.0, 0.0, 1.0])
    v_hat = np.array([1.0, 0.0, 0.0])
    x_m = x_i + lam * t_m * v_hat + (1 - lam) * t_m * v_i
    x_o = x_i + t_m * v_i
    c1, c2 = domain_thresholds(x_m, x_o, t_m)
    sep = lam * t_m * np.sqrt(2.0)
    assert c1 == pytest.approx(sep / 4.0)
    assert c2 == pytest.approx(lam ** 2 / 4.0, rel=1e-12)
    assert c2 == pytest.approx(0.0625)


def test_gauss_nodes_integrates_cubic():
    x, w = gauss_nodes(0.0, 2.0, 4)
    assert w @ x ** 3 == pytest.approx(4.0, rel=1e-13)
