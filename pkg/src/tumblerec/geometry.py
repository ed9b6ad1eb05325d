"""Geometry of the velocity sphere S^2.

Stereographic charts anchored at a reference velocity, product sphere
quadrature, the scattering change of variables z = s(v - anchor) with its
inverse and Jacobian, and the unique tumble-point construction on the
ellipse with focal points x_i, x_m.

All functions broadcast over trailing vector axes: velocities and positions
are arrays of shape (..., 3), plane points (..., 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, GeometryError

UNIT_TOL = 1e-12
ANTIPODE_ANGLE_GUARD = 1e-6  # rad, chart singularity at v = -anchor
EQUATOR_GUARD = 1e-9         # |<v, anchor>| margin for the printed Jacobian


def normalize(vec):
    """Return vec scaled to unit Euclidean norm (broadcasts over (..., 3))."""
    vec = np.asarray(vec, dtype=float)
    nrm = np.linalg.norm(vec, axis=-1, keepdims=True)
    if np.any(nrm == 0.0):
        raise DomainError("cannot normalize a zero vector")
    return vec / nrm


def as_unit(vec, tol=UNIT_TOL):
    """Validate that vec lies on S^2 within tol and return it as an array."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape[-1] != 3:
        raise DomainError(f"expected 3 components, got shape {vec.shape}")
    nrm = np.linalg.norm(vec, axis=-1)
    if np.any(np.abs(nrm - 1.0) > tol):
        raise DomainError(f"velocity norm {nrm} deviates from 1 beyond {tol}")
    return vec


def _dot(a, b):
    return np.sum(a * b, axis=-1)


@dataclass(frozen=True)
class StereographicChart:
    """Stereographic chart projecting away from -anchor.

    The tangent frame is deterministic: f1 is the normalized cross product
    of the anchor with the coordinate axis of its smallest-magnitude
    component, f2 = anchor x f1.
    """

    anchor: np.ndarray
    f1: np.ndarray
    f2: np.ndarray

    @classmethod
    def at(cls, anchor):
        anchor = as_unit(anchor)
        if anchor.ndim != 1:
            raise DomainError("chart anchor must be a single velocity")
        axis = np.zeros(3)
        axis[np.argmin(np.abs(anchor))] = 1.0
        f1 = normalize(np.cross(anchor, axis))
        f2 = np.cross(anchor, f1)
        return cls(anchor=anchor, f1=f1, f2=f2)


def chart(anchor):
    """Build the deterministic stereographic chart anchored at anchor."""
    return StereographicChart.at(anchor)


def project(ch: StereographicChart, v):
    """Stereographic projection of v into the chart plane.

    y = (<v,f1>, <v,f2>) / (1 + <v,anchor>); the anchor maps to the origin.
    """
    v = as_unit(v)
    c = _dot(v, ch.anchor)
    if np.any(c <= -np.cos(ANTIPODE_ANGLE_GUARD)):
        raise DomainError(
            f"velocity antipodal to chart anchor {ch.anchor}: projection singular")
    denom = 1.0 + c
    y = np.stack([_dot(v, ch.f1), _dot(v, ch.f2)], axis=-1)
    return y / denom[..., None]


def unproject(ch: StereographicChart, y):
    """Inverse of project; maps all of the plane into S^2 minus -anchor."""
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y * y, axis=-1)
    denom = 1.0 + r2
    v = ((1.0 - r2)[..., None] * ch.anchor
         + 2.0 * y[..., 0, None] * ch.f1
         + 2.0 * y[..., 1, None] * ch.f2)
    return v / denom[..., None]


def jacobian_j(ch: StereographicChart, v):
    """Jacobian factor j(v; anchor) = 1 / ((1 + <v,anchor>)^2 |<v,anchor>|).

    Guarded away from the equator and the antipode; probe construction
    keeps velocity supports clear of both sets.
    """
    v = as_unit(v)
    c = _dot(v, ch.anchor)
    if np.any(np.abs(c) < EQUATOR_GUARD):
        raise DomainError("velocity on the chart equator: Jacobian singular")
    if np.any(1.0 + c < EQUATOR_GUARD):
        raise DomainError("velocity antipodal to chart anchor: Jacobian singular")
    return 1.0 / ((1.0 + c) ** 2 * np.abs(c))


def chart_area_element(y):
    """True sphere area element of unproject: dv = 4/(1+|y|^2)^2 dy."""
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y * y, axis=-1)
    return 4.0 / (1.0 + r2) ** 2


def sphere_quadrature(order):
    """Product quadrature on S^2: Gauss-Legendre in cos(theta) x uniform azimuth.

    Returns (points, weights) with points of shape (2*order**2, 3) and
    positive weights summing to 4*pi. Exact for spherical polynomials up
    to degree ~2*order-1 in the polar variable.
    """
    if order < 2:
        raise ConfigurationError(f"sphere quadrature order must be >= 2, got {order}")
    mu, w_mu = np.polynomial.legendre.leggauss(order)
    n_az = 2 * order
    phi = 2.0 * np.pi * (np.arange(n_az) + 0.5) / n_az
    w_az = 2.0 * np.pi / n_az
    s = np.sqrt(1.0 - mu ** 2)
    pts = np.stack([
        np.outer(s, np.cos(phi)),
        np.outer(s, np.sin(phi)),
        np.outer(mu, np.ones(n_az)),
    ], axis=-1).reshape(-1, 3)
    wts = np.outer(w_mu, np.full(n_az, w_az)).reshape(-1)
    return pts, wts


def scatter_map(anchor, s, v):
    """Forward scattering change of variables: z = s (v - anchor)."""
    anchor = as_unit(anchor)
    v = as_unit(v)
    s = np.asarray(s, dtype=float)
    return s[..., None] * (v - anchor)


@dataclass(frozen=True)
class ScatterCoordinates:
    """A point (s, v) of the scattering domain with its image z = s(v - anchor)."""

    s: float
    v: np.ndarray
    z: np.ndarray

    @classmethod
    def from_sv(cls, anchor, s, v):
        if s < 0:
            raise DomainError("scatter time must be nonnegative")
        return cls(s=float(s), v=as_unit(v), z=scatter_map(anchor, s, v))


def zeta_omega(anchor, z):
    """Inverse of the scattering map: (zeta, omega)(z).

    zeta = |z|^2 / (2 |<z, anchor>|), omega = anchor + z / zeta.
    """
    anchor = as_unit(anchor)
    z = np.asarray(z, dtype=float)
    zn2 = np.sum(z * z, axis=-1)
    zdotn = _dot(z, anchor)
    if np.any(zn2 == 0.0):
        raise DomainError("scatter image z must be nonzero")
    if np.any(zdotn == 0.0):
        raise DomainError("scatter image z orthogonal to anchor: inverse singular")
    zeta = zn2 / (2.0 * np.abs(zdotn))
    omega = anchor + z / zeta[..., None]
    return zeta, omega


def jacobian_S(s, v, anchor):
    """Jacobian determinant of the scattering map: s^2 (1 - <v, anchor>)."""
    anchor = as_unit(anchor)
    v = as_unit(v)
    s = np.asarray(s, dtype=float)
    c = _dot(v, anchor)
    if np.any(1.0 - c <= UNIT_TOL):
        raise DomainError("v equals the anchor: scattering Jacobian vanishes")
    return s ** 2 * (1.0 - c)


@dataclass(frozen=True)
class TumbleGeometry:
    """One-tumble path geometry: x_m = x_i + s_hat*v_hat + (t_m - s_hat)*v_i."""

    x_i: np.ndarray
    v_i: np.ndarray
    x_m: np.ndarray
    t_m: float
    s_hat: float
    v_hat: np.ndarray
    lam: float

    MIN_TUMBLE_ANGLE = 0.1  # rad, default guard between v_hat and v_i

    def validate(self, min_angle=MIN_TUMBLE_ANGLE):
        rebuilt = self.x_i + self.s_hat * self.v_hat + (self.t_m - self.s_hat) * self.v_i
        if np.linalg.norm(rebuilt - self.x_m) > 1e-10:
            raise GeometryError("tumble constraint x_m = x_i + s*v_hat + (t_m-s)*v_i violated")
        if abs(self.s_hat - self.lam * self.t_m) > 1e-12:
            raise GeometryError("s_hat must equal lambda * t_m")
        if not (0.0 < self.lam < 1.0):
            raise GeometryError(f"lambda must lie in (0,1), got {self.lam}")
        cosang = float(np.clip(_dot(self.v_hat, self.v_i), -1.0, 1.0))
        if np.arccos(cosang) < min_angle:
            raise GeometryError(
                f"tumble angle {np.arccos(cosang):.3g} rad below minimum {min_angle}")
        return self

    @property
    def x_o(self):
        """Location reached at t_m assuming no tumble."""
        return self.x_i + self.v_i * self.t_m

    @property
    def separation(self):
        """Distance between measurement point and no-tumble point."""
        return float(np.linalg.norm(self.x_m - self.x_o))


def solve_tumble_point(x_i, v_i, x_m, t_m, min_angle=TumbleGeometry.MIN_TUMBLE_ANGLE):
    """Recover the unique (s_hat, v_hat) from the ellipse intersection.

    Solves tau = (t_m^2 - |d|^2) / (2 (t_m - <d, v_i>)) for the pre-tumble
    travel time tau = t_m - s_hat, with d = x_m - x_i.
    """
    x_i = np.asarray(x_i, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    v_i = as_unit(v_i)
    if t_m <= 0:
        raise GeometryError(f"t_m must be positive, got {t_m}")
    d = x_m - x_i
    dist = np.linalg.norm(d)
    if dist >= t_m:
        raise GeometryError(
            f"measurement point at distance {dist:.6g} >= t_m = {t_m:.6g}: unreachable")
    denom = 2.0 * (t_m - _dot(d, v_i))
    tau = (t_m ** 2 - dist ** 2) / denom
    s_hat = t_m - tau
    if s_hat <= 0:
        raise GeometryError("degenerate geometry: tumble time not in (0, t_m)")
    v_hat_raw = (d - tau * v_i) / s_hat
    nrm = np.linalg.norm(v_hat_raw)
    if abs(nrm - 1.0) > 1e-8:
        raise GeometryError("no unit post-tumble velocity solves the constraint")
    v_hat = v_hat_raw / nrm
    geo = TumbleGeometry(x_i=x_i, v_i=v_i, x_m=x_m, t_m=float(t_m),
                         s_hat=float(s_hat), v_hat=v_hat, lam=float(s_hat / t_m))
    return geo.validate(min_angle=min_angle)


def domain_thresholds(x_m, x_o, t_m):
    """Reduced-domain diagnostics: c1 = |x_m - x_o|/4, c2 = |x_m - x_o|^2/(8 t_m^2)."""
    x_m = np.asarray(x_m, dtype=float)
    x_o = np.asarray(x_o, dtype=float)
    sep = np.linalg.norm(x_m - x_o)
    if sep == 0.0:
        raise GeometryError("x_m coincides with the no-tumble point x_o")
    if t_m <= 0:
        raise GeometryError(f"t_m must be positive, got {t_m}")
    return sep / 4.0, sep ** 2 / (8.0 * t_m ** 2)


def gauss_nodes(a, b, n):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w
