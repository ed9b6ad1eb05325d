"""Tumbling kernel and damping coefficient fields.

KernelField wraps K(x, v, v') with its uniform bound C_K; SigmaField wraps
sigma(x, v) with C_sigma and a provenance flag. The loss coefficient can be
derived from the kernel by sphere quadrature, matching the loss-from-gain
relation sigma(x,v) = int_V K(x, v', v) dv'.

Evaluators must be pure, vectorized over trailing (..., 3) axes, and safe
for concurrent evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import AdmissibilityError, CatalogError, NumericsError
from .geometry import sphere_quadrature

SPHERE_MEASURE = 4.0 * np.pi

INDEPENDENT = "independent"
DERIVED = "derived-from-kernel"


@dataclass(frozen=True)
class KernelField:
    """Tumbling kernel K(x, v, v') with uniform bound C_K.

    analytic_sigma, when provided, is the closed form of the loss
    coefficient int_V K(x, v', v) dv' and lets the derived sigma skip the
    sphere rule in inner loops; the quadrature path remains the reference.
    """

    func: Callable
    bound: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    analytic_sigma: Callable = None

    def __call__(self, x, v, vp):
        return self.func(np.asarray(x, float), np.asarray(v, float),
                         np.asarray(vp, float))

    def describe(self):
        return {"name": self.name, "bound": self.bound, **self.params}


@dataclass(frozen=True)
class SigmaField:
    """Damping coefficient sigma(x, v) with bound C_sigma and provenance."""

    func: Callable
    bound: float
    provenance: str = INDEPENDENT
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x, v):
        return self.func(np.asarray(x, float), np.asarray(v, float))

    def describe(self):
        return {"name": self.name, "bound": self.bound,
                "provenance": self.provenance, **self.params}


@dataclass(frozen=True)
class ModelConfig:
    """Forward-model coefficients and time horizon."""

    kernel: KernelField
    sigma: SigmaField
    horizon: float

    @property
    def admissibility_product(self):
        """C_K * |V| * T; kernel experiments require this to be < 1."""
        return self.kernel.bound * SPHERE_MEASURE * self.horizon

    def describe(self):
        return {"kernel": self.kernel.describe(), "sigma": self.sigma.describe(),
                "horizon": self.horizon}


def sigma_from_kernel(kernel: KernelField, quadrature=None,
                      force_quadrature=False) -> SigmaField:
    """Derive sigma(x,v) = int_V K(x, v', v) dv' by sphere quadrature.

    Uses the kernel's closed-form loss coefficient when it carries one
    (builtin kernels do) unless force_quadrature is set.
    """
    if kernel.analytic_sigma is not None and not force_quadrature:
        func = kernel.analytic_sigma
    else:
        if quadrature is None:
            quadrature = sphere_quadrature(32)
        pts, wts = quadrature

        def func(x, v):
            x = np.asarray(x, float)
            v = np.asarray(v, float)
            shape = np.broadcast_shapes(x.shape[:-1], v.shape[:-1])
            xb = np.broadcast_to(x, shape + (3,))[..., None, :]
            vb = np.broadcast_to(v, shape + (3,))[..., None, :]
            vals = kernel(xb, pts, vb)
            return np.sum(vals * wts, axis=-1)

    return SigmaField(func=func, bound=kernel.bound * SPHERE_MEASURE,
                      provenance=DERIVED, name=f"derived({kernel.name})",
                      params=dict(kernel.params))


def line_integral_sigma(sigma: SigmaField, x, v, t, rtol=1e-9):
    """Adaptive quadrature of s -> sigma(x - v s, v) over [0, t]."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if t == 0:
        return 0.0
    x = np.asarray(x, float)
    v = np.asarray(v, float)

    def integrand(s):
        return float(sigma(x - v * s, v))

    val, err, info = integrate.quad(integrand, 0.0, t, epsrel=rtol,
                                    epsabs=1e-12, full_output=True)[:3]
    if err > max(rtol * abs(val), 1e-10):
        raise NumericsError(
            f"sigma line integral did not converge (err {err:.3g})",
            estimate=val, error_bound=err)
    return val


@dataclass(frozen=True)
class AdmissibilityReport:
    product: float
    sigma_permitted: bool
    kernel_permitted: bool
    violations: list

    def __str__(self):
        lines = [f"C_K * |V| * T = {self.product:.6g}",
                 f"sigma experiments permitted: {self.sigma_permitted}",
                 f"kernel experiments permitted: {self.kernel_permitted}"]
        for v in self.violations:
            lines.append(f"violation: {v}")
        return "\n".join(lines)


def validate_admissible(config: ModelConfig, samples=10_000, seed=0,
                        box_radius=2.0):
    """Sample-based admissibility report for a model configuration.

    Checks 0 <= K <= C_K and 0 <= sigma <= C_sigma on random points in a
    box around the origin, and reports C_K*|V|*T with the experiment types
    it permits. Report-only: never raises for violations.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box_radius, box_radius, size=(samples, 3))
    v = _random_sphere(rng, samples)
    vp = _random_sphere(rng, samples)
    violations = []

    kv = np.asarray(config.kernel(x, v, vp), float)
    bad = np.flatnonzero((kv < 0) | (kv > config.kernel.bound * (1 + 1e-12)))
    if bad.size:
        i = int(bad[0])
        violations.append(
            f"kernel value {kv[i]:.6g} outside [0, {config.kernel.bound:.6g}] "
            f"at x={x[i].tolist()}, v={v[i].tolist()}, v'={vp[i].tolist()}")

    sv = np.asarray(config.sigma(x, v), float)
    bad = np.flatnonzero((sv < -1e-12) | (sv > config.sigma.bound * (1 + 1e-12)))
    if bad.size:
        i = int(bad[0])
        violations.append(
            f"sigma value {sv[i]:.6g} outside [0, {config.sigma.bound:.6g}] "
            f"at x={x[i].tolist()}, v={v[i].tolist()}")

    product = config.admissibility_product
    return AdmissibilityReport(product=product,
                               sigma_permitted=not violations,
                               kernel_permitted=(not violations) and product < 1.0,
                               violations=violations)


def require_kernel_experiment(config: ModelConfig):
    """Raise unless the series-truncation condition C_K |V| T < 1 holds."""
    product = config.admissibility_product
    if product >= 1.0:
        raise AdmissibilityError(
            f"C_K * |V| * T = {product:.6g} >= 1: kernel reconstruction and "
            "series-truncation experiments are not permitted")


def _random_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# --- builtin catalog -------------------------------------------------------

def _kernel_zero():
    def func(x, v, vp):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1],
                                    np.shape(vp)[:-1])
        return np.zeros(shape)

    def sig(x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1]))

    return KernelField(func=func, bound=0.0, name="zero", analytic_sigma=sig)


def _kernel_constant(k0):
    def func(x, v, vp):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1],
                                    np.shape(vp)[:-1])
        return np.full(shape, k0)

    def sig(x, v):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1])
        return np.full(shape, SPHERE_MEASURE * k0)

    return KernelField(func=func, bound=k0, name="constant", params={"k0": k0},
                       analytic_sigma=sig)


def _kernel_smooth_space(k0, amplitude, wavevector):
    w = np.asarray(wavevector, float)
    if not 0 <= amplitude <= 1:
        raise CatalogError(f"smooth-space amplitude must be in [0,1], got {amplitude}")

    def func(x, v, vp):
        phase = np.sum(np.asarray(x, float) * w, axis=-1)
        base = k0 * (1.0 + amplitude * np.sin(phase))
        shape = np.broadcast_shapes(base.shape, np.shape(v)[:-1], np.shape(vp)[:-1])
        return np.broadcast_to(base, shape)

    def sig(x, v):
        phase = np.sum(np.asarray(x, float) * w, axis=-1)
        base = SPHERE_MEASURE * k0 * (1.0 + amplitude * np.sin(phase))
        return np.broadcast_to(base, np.broadcast_shapes(base.shape,
                                                         np.shape(v)[:-1]))

    return KernelField(func=func, bound=k0 * (1.0 + amplitude), name="smooth-space",
                       params={"k0": k0, "amplitude": amplitude,
                               "wavevector": w.tolist()},
                       analytic_sigma=sig)


def _kernel_anisotropic(k0, beta):
    if abs(beta) > 1:
        raise CatalogError(f"anisotropic beta must satisfy |beta| <= 1, got {beta}")

    def func(x, v, vp):
        c = np.sum(np.asarray(v, float) * np.asarray(vp, float), axis=-1)
        vals = k0 * (1.0 + beta * c)
        shape = np.broadcast_shapes(vals.shape, np.shape(x)[:-1])
        return np.broadcast_to(vals, shape)

    def sig(x, v):
        # the <v', v> term integrates to zero over the sphere
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1])
        return np.full(shape, SPHERE_MEASURE * k0)

    return KernelField(func=func, bound=k0 * (1.0 + abs(beta)), name="anisotropic",
                       params={"k0": k0, "beta": beta}, analytic_sigma=sig)


KERNEL_CATALOG = {
    "zero": _kernel_zero,
    "constant": _kernel_constant,
    "smooth-space": _kernel_smooth_space,
    "anisotropic": _kernel_anisotropic,
}


def builtin_kernel(name, **params):
    """Build a kernel from the catalog: zero, constant, smooth-space, anisotropic."""
    try:
        factory = KERNEL_CATALOG[name]
    except KeyError:
        raise CatalogError(
            f"unknown kernel {name!r}; valid names: {sorted(KERNEL_CATALOG)}") from None
    return factory(**params)


def builtin_sigma(name, **params):
    """Build an independent sigma field with the catalog spatial shapes.

    Supported: zero, constant(k0), smooth-space(k0, amplitude, wavevector);
    the value is velocity-independent.
    """
    if name not in ("zero", "constant", "smooth-space"):
        raise CatalogError(
            f"unknown sigma field {name!r}; valid names: "
            "['constant', 'smooth-space', 'zero']")
    kernel = builtin_kernel(name, **params)

    def func(x, v):
        return kernel(x, v, v)

    return SigmaField(func=func, bound=kernel.bound, provenance=INDEPENDENT,
                      name=name, params=dict(kernel.params))


def builtin_fields(name, kind="kernel", **params):
    """Catalog entry point; kind selects 'kernel' or 'sigma'."""
    if kind == "kernel":
        return builtin_kernel(name, **params)
    if kind == "sigma":
        return builtin_sigma(name, **params)
    raise CatalogError(f"unknown field kind {kind!r}; use 'kernel' or 'sigma'")


def constant_model(k0, horizon):
    """Constant-kernel model with sigma derived from the kernel."""
    kernel = builtin_kernel("constant", k0=k0)
    return ModelConfig(kernel=kernel, sigma=sigma_from_kernel(kernel),
                       horizon=horizon)
