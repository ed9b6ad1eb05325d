"""Singular probe construction: bump profiles, initial data phi, test functions psi.

The bump family is a plateau joined to the mollifier exp(1 - 1/(1 - q^2)):
value 1 on ||p|| <= r0, the mollifier in the rescaled shell
q = (||p|| - r0)/(R - r0), and 0 outside the support radius R < 1. The
plateau radius r0 is root-found so the integral over R^d equals 1; all four
probe properties (support in the unit ball, values in [0,1], peak 1 at the
origin, unit integral) then hold by construction.

Note the support radius is a free knob below 1. With the shell profile
fixed, the mollifier alone already integrates to more than 1 in dimensions
1 and 3 when the support fills the whole unit ball, so the plateau radius
alone cannot normalize there; shrinking the support restores a bracket in
every dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigurationError, GeometryError, ProbeError
from .geometry import (StereographicChart, TumbleGeometry, as_unit, chart,
                       jacobian_j, project)

_SURFACE = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}  # |S^{d-1}|

DEFAULT_SUPPORT_RADIUS = 0.8
MAX_CAP_ANGLE = np.pi / 3.0  # polar-angle guard for the chart Jacobian


def _mollifier(q):
    """exp(1 - 1/(1 - q^2)) on (0, 1), clamped to 0 outside."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape)
    inside = (q > 0.0) & (q < 1.0)
    qi = q[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - qi * qi))
    out[q <= 0.0] = 1.0
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Radial plateau-plus-mollifier bump with unit integral over R^dimension."""

    dimension: int
    plateau_radius: float
    support_radius: float

    def radial(self, r):
        """Profile value as a function of the radius ||p||."""
        r = np.asarray(r, dtype=float)
        q = (r - self.plateau_radius) / (self.support_radius - self.plateau_radius)
        return _mollifier(q)

    def __call__(self, points):
        """Evaluate at points of shape (..., dimension) (or radii if dim 1)."""
        points = np.asarray(points, dtype=float)
        if self.dimension == 1 and (points.ndim == 0 or points.shape[-1] != 1):
            r = np.abs(points)
        else:
            r = np.linalg.norm(points, axis=-1)
        return self.radial(r)

    def mass(self):
        """Integral over R^dimension by adaptive radial quadrature."""
        return _radial_mass(self.dimension, self.plateau_radius, self.support_radius)


def _radial_mass(dim, r0, support):
    surf = _SURFACE[dim]
    plateau = surf * r0 ** dim / dim
    shell, _ = integrate.quad(
        lambda r: r ** (dim - 1) * _mollifier((r - r0) / (support - r0)),
        r0, support, epsabs=1e-13, epsrel=1e-12)
    return plateau + surf * shell


@lru_cache(maxsize=None)
def make_bump(dimension, support_radius=DEFAULT_SUPPORT_RADIUS):
    """Construct the unit-integral bump by root-finding the plateau radius."""
    if dimension not in (1, 2, 3):
        raise ConfigurationError(f"bump dimension must be 1, 2 or 3, got {dimension}")
    if not 0.0 < support_radius <= 1.0:
        raise ConfigurationError(
            f"support radius must lie in (0, 1], got {support_radius}")

    def gap(r0):
        return _radial_mass(dimension, r0, support_radius) - 1.0

    lo, hi = 1e-9, support_radius * (1.0 - 1e-9)
    if gap(lo) >= 0.0 or gap(hi) <= 0.0:
        raise ConfigurationError(
            f"no plateau radius normalizes the dim-{dimension} bump at support "
            f"radius {support_radius}; the integral spans "
            f"[{gap(lo) + 1:.4g}, {gap(hi) + 1:.4g}]")
    r0 = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15)
    return BumpProfile(dimension=dimension, plateau_radius=float(r0),
                       support_radius=float(support_radius))


@dataclass(frozen=True)
class BumpSet:
    """The four probe profiles phi_x, phi_v, psi_x, psi_t."""

    phi_x: BumpProfile
    phi_v: BumpProfile
    psi_x: BumpProfile
    psi_t: BumpProfile

    @classmethod
    def default(cls, support_radius=DEFAULT_SUPPORT_RADIUS):
        return cls(phi_x=make_bump(3, support_radius),
                   phi_v=make_bump(2, support_radius),
                   psi_x=make_bump(3, support_radius),
                   psi_t=make_bump(1, support_radius))


def c_phipsi(bump_phi_x, bump_psi_x, offset=0.0):
    """Overlap constant C = int phi_x(x) psi_x(x - offset*e) dx.

    offset > 0 shifts psi_x along a fixed axis (test fixture for broken
    centering); the default 0 is the probe value.
    """
    if bump_phi_x.dimension != 3 or bump_psi_x.dimension != 3:
        raise ConfigurationError("overlap constant requires dimension-3 bumps")
    if offset == 0.0:
        val, _ = integrate.quad(
            lambda r: r * r * bump_phi_x.radial(r) * bump_psi_x.radial(r),
            0.0, min(bump_phi_x.support_radius, bump_psi_x.support_radius),
            epsabs=1e-13, epsrel=1e-11)
        return 4.0 * np.pi * val

    d = float(offset)

    def inner(r):
        mu, w = np.polynomial.legendre.leggauss(64)
        rr = np.sqrt(np.maximum(r * r + d * d - 2.0 * r * d * mu, 0.0))
        return float(np.sum(w * bump_psi_x.radial(rr)))

    val, _ = integrate.quad(
        lambda r: r * r * bump_phi_x.radial(r) * inner(r),
        0.0, bump_phi_x.support_radius, epsabs=1e-12, epsrel=1e-9)
    return 2.0 * np.pi * val


def _cap_angle(delta, support):
    """Polar angle of the velocity support: |y| <= delta*support on the chart."""
    return 2.0 * np.arctan(delta * support)


@dataclass(frozen=True)
class SigmaProbe:
    """Probe pair for the damping-coefficient experiment (x_m on the ray)."""

    x_i: np.ndarray
    v_i: np.ndarray
    t_m: float
    eps: float
    delta: float
    eta: float
    bumps: BumpSet
    chart: StereographicChart = field(repr=False, default=None)

    kind = "sigma"

    @property
    def x_m(self):
        return self.x_i + self.v_i * self.t_m

    def validate(self):
        if min(self.eps, self.delta, self.eta) <= 0:
            raise ProbeError("all probe scales must be positive")
        if self.eta >= self.t_m:
            raise ProbeError(
                f"time-window scale eta={self.eta} must stay below t_m={self.t_m}")
        ang = _cap_angle(self.delta, self.bumps.phi_v.support_radius)
        if ang > MAX_CAP_ANGLE:
            raise ProbeError(
                f"velocity support spans polar angle {ang:.3g} > pi/3; reduce delta")
        return self

    def summary(self):
        return {"kind": self.kind, "x_i": self.x_i.tolist(),
                "v_i": self.v_i.tolist(), "x_m": self.x_m.tolist(),
                "t_m": self.t_m, "eps": self.eps, "delta": self.delta,
                "eta": self.eta,
                "bump_support": self.bumps.phi_x.support_radius}


@dataclass(frozen=True)
class KProbe:
    """Probe pair for the tumbling-kernel experiment (x_m off the ray)."""

    geometry: TumbleGeometry
    eps: float
    delta: float
    eta: float
    nu: float
    alpha: float
    c_sv: float
    bumps: BumpSet
    chart: StereographicChart = field(repr=False, default=None)

    kind = "k"

    @property
    def x_i(self):
        return self.geometry.x_i

    @property
    def v_i(self):
        return self.geometry.v_i

    @property
    def x_m(self):
        return self.geometry.x_m

    @property
    def t_m(self):
        return self.geometry.t_m

    @property
    def support_separated(self):
        """Whether ||x_m - x_o|| exceeds the initial-data scale eps."""
        return self.geometry.separation > self.eps

    def validate(self):
        if min(self.eps, self.delta, self.eta, self.nu) <= 0:
            raise ProbeError("all probe scales must be positive")
        if abs(self.t_m - self.eps ** self.alpha) > 1e-12:
            raise ProbeError("t_m must equal eps**alpha")
        expected = self.geometry.s_hat ** 2 * (
            1.0 - float(np.dot(self.geometry.v_i, self.geometry.v_hat)))
        if abs(self.c_sv - expected) > 1e-12:
            raise ProbeError("stored C_{s,v} disagrees with the geometry")
        if not all(s < self.eps for s in (self.delta, self.eta, self.nu)):
            raise ProbeError("inner scales delta, eta, nu must be below eps")
        if self.eta >= self.t_m:
            raise ProbeError(
                f"time-window scale eta={self.eta} must stay below t_m={self.t_m}")
        ang = _cap_angle(self.delta, self.bumps.phi_v.support_radius)
        if ang > MAX_CAP_ANGLE:
            raise ProbeError(
                f"velocity support spans polar angle {ang:.3g} > pi/3; reduce delta")
        self.geometry.validate()
        return self

    def summary(self):
        g = self.geometry
        return {"kind": self.kind, "x_i": g.x_i.tolist(), "v_i": g.v_i.tolist(),
                "x_m": g.x_m.tolist(), "t_m": g.t_m, "s_hat": g.s_hat,
                "v_hat": g.v_hat.tolist(), "lambda": g.lam,
                "alpha": self.alpha, "c_sv": self.c_sv,
                "eps": self.eps, "delta": self.delta, "eta": self.eta,
                "nu": self.nu, "separation": g.separation,
                "support_separated": self.support_separated,
                "bump_support": self.bumps.phi_x.support_radius}


def build_sigma_probe(x_i, v_i, t_m, eps, inner_ratio=None, bumps=None):
    """Sigma probe with inner scales delta = eta = inner_ratio * eps.

    inner_ratio defaults to eps itself (inner scales eps^2), emulating the
    nested limit delta, eta -> 0 before eps -> 0 with one ladder parameter.
    """
    v_i = as_unit(v_i)
    x_i = np.asarray(x_i, dtype=float)
    if bumps is None:
        bumps = BumpSet.default()
    if inner_ratio is None:
        inner_ratio = eps
    inner = inner_ratio * eps
    probe = SigmaProbe(x_i=x_i, v_i=v_i, t_m=float(t_m), eps=float(eps),
                       delta=inner, eta=inner, bumps=bumps, chart=chart(v_i))
    return probe.validate()


def build_k_probe(x_i, v_i, v_hat, lam, alpha, eps, inner_ratio=None, bumps=None):
    """Kernel probe with t_m = eps**alpha and the tumble geometry on the ellipse."""
    if not 0.75 < alpha < 1.0:
        raise ConfigurationError(
            f"alpha must lie in (3/4, 1) for the eps^(4*alpha-3) tail decay, "
            f"got {alpha}")
    if not 0.0 < lam < 1.0:
        raise ConfigurationError(f"lambda must lie in (0, 1), got {lam}")
    v_i = as_unit(v_i)
    v_hat = as_unit(v_hat)
    x_i = np.asarray(x_i, dtype=float)
    if bumps is None:
        bumps = BumpSet.default()
    if inner_ratio is None:
        inner_ratio = eps
    t_m = eps ** alpha
    s_hat = lam * t_m
    x_m = x_i + s_hat * v_hat + (t_m - s_hat) * v_i
    geo = TumbleGeometry(x_i=x_i, v_i=v_i, x_m=x_m, t_m=t_m, s_hat=s_hat,
                         v_hat=v_hat, lam=lam).validate()
    inner = inner_ratio * eps
    c_sv = s_hat ** 2 * (1.0 - float(np.dot(v_i, v_hat)))
    probe = KProbe(geometry=geo, eps=float(eps), delta=inner, eta=inner,
                   nu=inner, alpha=float(alpha), c_sv=c_sv, bumps=bumps,
                   chart=chart(v_i))
    return probe.validate()


def eval_phi(probe, x, v):
    """Initial data phi(x, v) = eps^-3 delta^-2 phi_x phi_v(P(v)/delta) j(v)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], v.shape[:-1])
    xb = np.broadcast_to(x, shape + (3,)).reshape(-1, 3)
    vb = np.broadcast_to(v, shape + (3,)).reshape(-1, 3)
    rx = np.linalg.norm(xb - probe.x_i, axis=-1) / probe.eps
    fx = probe.bumps.phi_x.radial(rx)
    out = np.zeros(len(xb))
    # velocity support lies in a polar cap of angle <= pi/3, so restricting
    # to <v, v_i> > 0.5 also keeps the chart guards inactive
    cand = np.flatnonzero((fx > 0.0) & (vb @ probe.chart.anchor > 0.5))
    if cand.size:
        y = project(probe.chart, vb[cand])
        fv = probe.bumps.phi_v(y / probe.delta)
        pos = fv > 0.0
        idx = cand[pos]
        if idx.size:
            jac = jacobian_j(probe.chart, vb[idx])
            out[idx] = (fx[idx] * fv[pos] * jac
                        / (probe.eps ** 3 * probe.delta ** 2))
    return out.reshape(shape) if shape else float(out[0])


def eval_psi(probe, x, t):
    """Measurement test function psi(x, t) for either probe kind."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    ft = probe.bumps.psi_t((t - probe.t_m) / probe.eta)
    if probe.kind == "sigma":
        rx = np.linalg.norm(x - probe.x_m, axis=-1) / probe.eps
        return probe.bumps.psi_x.radial(rx) * ft / probe.eta
    rx = np.linalg.norm(x - probe.x_m, axis=-1) / probe.nu
    return (probe.bumps.psi_x.radial(rx) * ft * probe.c_sv
            / (probe.nu ** 3 * probe.eta))


def velocity_mass(probe, nodes=200):
    """Actual mass of the chart-velocity factor of phi.

    m_v = int phi_v(u) (1 + d^2)/(1 - d^2) du with d = delta*|u|; equals 1
    only in the delta -> 0 limit because the printed Jacobian j is not the
    exact chart area element. Reported per run.
    """
    support = probe.bumps.phi_v.support_radius
    r, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * support * (r + 1.0)
    w = 0.5 * support * w
    d2 = (probe.delta * r) ** 2
    vals = probe.bumps.phi_v.radial(r) * (1.0 + d2) / (1.0 - d2)
    return 2.0 * np.pi * float(np.sum(w * r * vals))


def phi_total_mass(probe, disk_nodes=200):
    """Total initial mass int int phi dv dx = 1 * m_v (phi_x integrates to 1)."""
    return velocity_mass(probe, nodes=disk_nodes)
