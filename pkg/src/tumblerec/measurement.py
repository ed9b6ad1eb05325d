"""Macroscopic measurements M_psi(rho) = int int rho(x,t) psi(x,t) dx dt.

The series path integrates each collision order of the density against the
probe test function: orders 0 and 1 by tensor-product Gauss rules over the
psi support (order 1 on a coarsened spatial grid, since the density is
smooth on the psi scale), higher orders and the tail by importance-sampled
Monte Carlo. The particle path integrates psi along simulated trajectories.

All reductions use fixed orderings, so repeated runs with the same seed are
bit-identical regardless of how work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ProbeError
from .fields import ModelConfig
from .geometry import gauss_nodes, sphere_quadrature
from .probes import eval_psi
from .solver import (QuadratureSpec, SPHERE_MEASURE, _chain_batch,
                     _random_unit, remainder_bound, rho0_batch, rho1_batch,
                     rng_stream)


@dataclass(frozen=True)
class MeasurementResult:
    """One measurement with its per-order breakdown and error accounting.

    per_order holds (order, value, stderr) triples; stderr is 0 for
    deterministic quadrature entries. total = sum of per-order values plus
    the Monte Carlo tail estimate. tail_bound is the analytic remainder
    bound past the last computed order (None when C_K |V| T >= 1).
    """

    total: float
    per_order: tuple
    tail_estimate: float
    tail_stderr: float
    tail_bound: float
    method: str
    probe: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    @property
    def stderr(self):
        errs = [e for (_, _, e) in self.per_order] + [self.tail_stderr]
        return float(np.sqrt(np.sum(np.square(errs))))

    def order_value(self, order):
        for (n, v, _) in self.per_order:
            if n == order:
                return v
        raise KeyError(f"order {order} was not computed")

    def as_row(self):
        row = {"method": self.method, "total": repr(float(self.total)),
               "stderr": repr(float(self.stderr)),
               "tail_estimate": repr(float(self.tail_estimate)),
               "tail_bound": "" if self.tail_bound is None
               else repr(float(self.tail_bound))}
        for (n, v, e) in self.per_order:
            row[f"order{n}"] = repr(float(v))
            row[f"order{n}_stderr"] = repr(float(e))
        return row


def psi_window(probe, horizon):
    """Time support [t_m - eta*R, t_m + eta*R] of psi, checked against [0, T]."""
    half = probe.eta * probe.bumps.psi_t.support_radius
    t0, t1 = probe.t_m - half, probe.t_m + half
    if t0 < 0.0 or t1 > horizon:
        raise ProbeError(
            f"psi time window [{t0:.6g}, {t1:.6g}] leaves the horizon [0, {horizon}]")
    return t0, t1


def _psi_space_scale(probe):
    return probe.eps if probe.kind == "sigma" else probe.nu


def _psi_grid(probe, horizon, space_nodes, window_nodes):
    """Tensor grid over the psi support with psi already factored in.

    Returns (X, WX, times, WT): spatial nodes (m, 3) with weights that
    include the psi_x factor and spatial prefactors, and time nodes with
    weights that include the psi_t factor and its prefactors, so that
    M = sum_t WT sum_x WX rho(x, t).
    """
    scale = _psi_space_scale(probe)
    half = scale * probe.bumps.psi_x.support_radius
    g, w = gauss_nodes(-half, half, space_nodes)
    gx, gy, gz = np.meshgrid(g, g, g, indexing="ij")
    X = probe.x_m + np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    WX = np.einsum("i,j,k->ijk", w, w, w).reshape(-1)
    sx = probe.bumps.psi_x.radial(
        np.linalg.norm(X - probe.x_m, axis=-1) / scale)
    live = sx > 0.0
    X, WX = X[live], WX[live] * sx[live]

    t0, t1 = psi_window(probe, horizon)
    times, WT = gauss_nodes(t0, t1, window_nodes)
    WT = WT * probe.bumps.psi_t((times - probe.t_m) / probe.eta)
    if probe.kind == "sigma":
        WT = WT / probe.eta
    else:
        WT = WT * probe.c_sv / (probe.nu ** 3 * probe.eta)
    return X, WX, times, WT


def _order0_quadrature(model, probe, spec):
    X, WX, times, WT = _psi_grid(probe, model.horizon,
                                 spec.space_nodes, spec.window_nodes)
    total = 0.0
    for t, wt in zip(times, WT):
        total += wt * float(WX @ rho0_batch(model, probe, X,
                                            np.full(len(X), t), spec))
    return total


def _psi_ball_grid(probe, horizon, radial_nodes, sphere_order, window_nodes):
    """Radial x sphere product rule over the psi_x ball, psi factored in.

    Unlike the tensor grid this never wastes nodes outside the support, so
    very low orders remain usable; meant for integrands that are smooth on
    the psi scale (the order-1 density).
    """
    scale = _psi_space_scale(probe)
    R = probe.bumps.psi_x.support_radius
    r, wr = gauss_nodes(0.0, R, radial_nodes)
    dirs, wd = sphere_quadrature(sphere_order)
    X = probe.x_m + scale * (r[:, None, None] * dirs[None, :, :])
    X = X.reshape(-1, 3)
    # normalize the radial weights to the exact psi_x mass so the rule is
    # exact for constant integrands even at very low node counts
    rad = wr * r * r * probe.bumps.psi_x.radial(r)
    rad *= 1.0 / (SPHERE_MEASURE * rad.sum())
    WX = np.outer(rad, wd).reshape(-1) * scale ** 3
    t0, t1 = psi_window(probe, horizon)
    times, wt = gauss_nodes(t0, t1, window_nodes)
    wt = wt * probe.bumps.psi_t((times - probe.t_m) / probe.eta)
    wt *= 1.0 / wt.sum()
    if probe.kind == "sigma":
        WT = wt
    else:
        WT = wt * probe.c_sv / probe.nu ** 3
    return X, WX, times, WT


def _order1_quadrature(model, probe, spec, radial_nodes=3, sphere_order=2,
                       window_nodes=4):
    # rho1 is smooth on the psi scale, so a small ball rule suffices
    X, WX, times, WT = _psi_ball_grid(probe, model.horizon, radial_nodes,
                                      sphere_order, window_nodes)
    total = 0.0
    for t, wt in zip(times, WT):
        total += wt * float(WX @ rho1_batch(model, probe, X,
                                            np.full(len(X), t), spec))
    return total


def _order_mc(model, probe, order, samples, seed, spec, chunk=200_000):
    """Monte Carlo estimate of M(rho_order) for order >= 1.

    Samples (x, t) uniformly over the psi support box x window and the
    starting velocity uniformly over the sphere; chain weights supply the
    rest of the integrand.
    """
    if samples < 100:
        raise ConfigurationError(f"need at least 100 samples, got {samples}")
    scale = _psi_space_scale(probe)
    half = scale * probe.bumps.psi_x.support_radius
    t0, t1 = psi_window(probe, model.horizon)
    vol = (2.0 * half) ** 3 * (t1 - t0)
    rng = rng_stream(seed, 0x4D43, order)
    total = 0.0
    total2 = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = probe.x_m + rng.uniform(-half, half, size=(m, 3))
        t = rng.uniform(t0, t1, size=m)
        psi = eval_psi(probe, x, t)
        v0 = _random_unit(rng, m)
        w = np.zeros(m)
        live = psi != 0.0
        if np.any(live):
            w[live] = psi[live] * _chain_batch(rng, model, probe, order,
                                               x[live], t[live], v0[live],
                                               spec)
        w *= vol * SPHERE_MEASURE
        total += w.sum()
        total2 += (w * w).sum()
        done += m
    mean = total / samples
    var = max(total2 / samples - mean ** 2, 0.0)
    return mean, float(np.sqrt(var / samples))


def measure(model: ModelConfig, probe, spec=None, orders=1, seed=0,
            mc_samples=50_000, tail_orders=1, tail_samples=20_000,
            order1_method=None):
    """Series measurement of M_psi(rho) up to the requested collision order.

    Order 0 is always deterministic quadrature. Order 1 defaults to
    quadrature for kernel probes (where it carries the signal) and Monte
    Carlo for sigma probes (where it is a small correction); override with
    order1_method in {"quadrature", "mc"}. Orders >= 2 and the tail
    estimate (orders+1 .. orders+tail_orders) use Monte Carlo.
    """
    spec = spec or QuadratureSpec()
    probe.validate()
    per = [(0, _order0_quadrature(model, probe, spec), 0.0)]
    if model.kernel.bound == 0.0:
        orders = 0
    if order1_method is None:
        order1_method = "quadrature" if probe.kind == "k" else "mc"
    for n in range(1, orders + 1):
        if n == 1 and order1_method == "quadrature":
            per.append((1, _order1_quadrature(model, probe, spec), 0.0))
        else:
            val, err = _order_mc(model, probe, n, mc_samples, seed, spec)
            per.append((n, val, err))

    tail_est = 0.0
    tail_err2 = 0.0
    if model.kernel.bound > 0.0 and tail_orders > 0:
        for n in range(orders + 1, orders + tail_orders + 1):
            val, err = _order_mc(model, probe, n, tail_samples, seed, spec)
            tail_est += val
            tail_err2 += err ** 2
    if model.kernel.bound == 0.0:
        tail_bound = 0.0
    elif model.admissibility_product < 1.0:
        tail_bound = remainder_bound(orders, model)
    else:
        tail_bound = None

    total = sum(v for (_, v, _) in per) + tail_est
    return MeasurementResult(total=total, per_order=tuple(per),
                             tail_estimate=tail_est,
                             tail_stderr=float(np.sqrt(tail_err2)),
                             tail_bound=tail_bound, method="series",
                             probe=probe.summary(), model=model.describe())


def measure_tail_mc(model, probe, first_order, n_orders=2, samples=20_000,
                    seed=0, spec=None):
    """Monte Carlo estimate of M(rho_{>= first_order}) truncated at n_orders terms.

    Returns (estimate, stderr). Orders beyond first_order + n_orders - 1 are
    neglected; with C_K |V| T < 1 their geometric weight is small.
    """
    spec = spec or QuadratureSpec()
    est = 0.0
    err2 = 0.0
    for n in range(first_order, first_order + n_orders):
        val, err = _order_mc(model, probe, n, samples, seed, spec)
        est += val
        err2 += err ** 2
    return est, float(np.sqrt(err2))


def measure_particle(ensemble, probe, panels=4, nodes=8):
    """Particle estimate of M_psi(rho) with its standard error.

    Integrates psi(x_i(t), t) along each trajectory over the psi time
    window by composite Gauss quadrature, then averages over particles and
    scales by the ensemble mass.
    """
    t0, t1 = psi_window(probe, ensemble.horizon)
    per_particle = np.zeros(ensemble.count)
    edges = np.linspace(t0, t1, panels + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        ts, ws = gauss_nodes(a, b, nodes)
        for t, w in zip(ts, ws):
            pos, _ = ensemble.states_at(t)
            per_particle += w * eval_psi(probe, pos, t)
    mean = float(ensemble.mass * per_particle.mean())
    stderr = float(ensemble.mass * per_particle.std(ddof=1)
                   / np.sqrt(ensemble.count))
    return MeasurementResult(total=mean, per_order=(),
                             tail_estimate=0.0, tail_stderr=stderr,
                             tail_bound=None, method="particle",
                             probe=probe.summary(),
                             model={"particles": ensemble.count,
                                    "seed": ensemble.seed,
                                    "mass": ensemble.mass})


def integrate_against_psi(probe, density, horizon, space_nodes=16,
                          window_nodes=16):
    """Quadrature of an arbitrary density rho(X, t) against psi.

    density maps (points (m, 3), time) to values (m,); useful for checking
    normalizations (rho = 1 gives eps^3 for sigma probes and C_{s,v} for
    kernel probes) and linearity of the measurement map.
    """
    X, WX, times, WT = _psi_grid(probe, horizon, space_nodes, window_nodes)
    total = 0.0
    for t, wt in zip(times, WT):
        total += wt * float(WX @ np.asarray(density(X, t), float))
    return total
