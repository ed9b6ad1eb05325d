"""Forward model for the kinetic chemotaxis equation.

Collision-order decomposition of the solution: the never-tumbled part f0 is
evaluated in closed form along characteristics, the once-tumbled part f1 by
deterministic quadrature over the probe's velocity cap and the tumble time,
and orders n >= 2 by importance-sampled Monte Carlo over backward collision
histories. A stochastic velocity-jump particle simulator provides an
independent oracle in the mass-conserving (derived-sigma) mode.

Evaluation points are batched; arrays of shape (n, 3) / (n,) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AdmissibilityError, ConfigurationError, NumericsError
from .fields import DERIVED, ModelConfig, line_integral_sigma
from .geometry import gauss_nodes, normalize, sphere_quadrature, unproject
from .probes import eval_phi, eval_psi, velocity_mass

SPHERE_MEASURE = 4.0 * np.pi
_TINY = 1e-14


@dataclass(frozen=True)
class QuadratureSpec:
    """Orders of all deterministic rules used by the series evaluators."""

    disk_radial: int = 10      # radial nodes of the chart-disk rule for phi_v
    disk_azimuth: int = 8
    time_nodes: int = 12       # Gauss nodes for the tumble-time integral
    cap_polar: int = 8         # polar nodes of the post-tumble velocity cap
    cap_azimuth: int = 8
    sigma_nodes: int = 6       # Gauss nodes per damping line integral
    sphere_order: int = 16     # full-sphere rule (rho of order >= 1, pointwise)
    space_nodes: int = 16      # measurement grid, per spatial axis
    window_nodes: int = 16     # measurement grid, time axis

    def refined(self, level):
        """Halve (level=-1) or double (level=+1) the measurement grid."""
        f = 2.0 ** level
        return replace(self,
                       space_nodes=max(2, int(round(self.space_nodes * f))),
                       window_nodes=max(2, int(round(self.window_nodes * f))))


def rng_stream(seed, *key):
    """Counter-based Philox generator keyed by (seed, *key).

    Streams depend only on the logical key, never on scheduling, so
    reductions over tasks are reproducible at any parallelism level.
    """
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _leggauss01(n):
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


def _line_gauss(sigma, start, vel, length, nodes):
    """int_0^length sigma(start - vel*tau, vel) dtau by fixed Gauss rule.

    Accumulates node by node to keep peak memory at one position array.
    """
    tau, w = _leggauss01(nodes)
    length = np.asarray(length, float)
    out = 0.0
    for k in range(nodes):
        pos = start - vel * (length[..., None] * tau[k])
        out = out + w[k] * sigma(pos, vel)
    return out * length


def _random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _frames(n_hat):
    """Deterministic orthonormal tangent frames for unit vectors (..., 3)."""
    a = np.abs(n_hat)
    axis = np.zeros_like(n_hat)
    idx = np.argmin(a, axis=-1)
    np.put_along_axis(axis, idx[..., None], 1.0, axis=-1)
    f1 = np.cross(n_hat, axis)
    f1 = f1 / np.linalg.norm(f1, axis=-1, keepdims=True)
    f2 = np.cross(n_hat, f1)
    return f1, f2


def _phi_v_rule(probe, spec: QuadratureSpec):
    """Nodes and weights turning the phi velocity factor into a chart-disk sum.

    Returns (velocities (m,3), weights (m,)) with
    int F(v) delta^-2 phi_v(P(v)/delta) j(v) dv ~= sum_m w_m F(v_m);
    the printed Jacobian j combined with the true chart area element leaves
    a 1/<v, anchor> factor on the disk.
    """
    R = probe.bumps.phi_v.support_radius
    r, wr = gauss_nodes(0.0, R, spec.disk_radial)
    na = spec.disk_azimuth
    ang = 2.0 * np.pi * (np.arange(na) + 0.5) / na
    u = np.stack([np.outer(r, np.cos(ang)), np.outer(r, np.sin(ang))],
                 axis=-1).reshape(-1, 2)
    w = np.outer(wr * r * probe.bumps.phi_v.radial(r),
                 np.full(na, 2.0 * np.pi / na)).reshape(-1)
    vels = unproject(probe.chart, probe.delta * u)
    w = w / (vels @ probe.chart.anchor)
    return vels, w


# --- order 0 ---------------------------------------------------------------

def eval_f0(model: ModelConfig, probe, x, t, v, rtol=1e-9):
    """Never-tumbled solution f0 = exp(-int sigma) phi(x - v t, v), pointwise."""
    if not 0.0 <= t <= model.horizon:
        raise ValueError(f"time {t} outside [0, {model.horizon}]")
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    phi_val = float(eval_phi(probe, x - v * t, v))
    if phi_val == 0.0:
        return 0.0
    return float(np.exp(-line_integral_sigma(model.sigma, x, v, t, rtol=rtol))
                 * phi_val)


def f0_batch(model, probe, X, T, V, spec: QuadratureSpec):
    """Vectorized f0 with fixed-order Gauss damping integrals."""
    X = np.atleast_2d(np.asarray(X, float))
    V = np.atleast_2d(np.asarray(V, float))
    T = np.atleast_1d(np.asarray(T, float))
    phi_val = np.atleast_1d(eval_phi(probe, X - V * T[:, None], V))
    out = np.zeros(len(phi_val))
    live = np.flatnonzero(phi_val > 0.0)
    if live.size:
        expo = _line_gauss(model.sigma, X[live], V[live], T[live],
                           spec.sigma_nodes)
        out[live] = np.exp(-expo) * phi_val[live]
    return out


def rho0_batch(model, probe, X, T, spec: QuadratureSpec):
    """Velocity average of f0 on the chart-disk rule, batched over points."""
    X = np.atleast_2d(np.asarray(X, float))
    T = np.atleast_1d(np.asarray(T, float))
    vels, wv = _phi_v_rule(probe, spec)
    m = len(vels)
    base = X[:, None, :] - T[:, None, None] * vels[None, :, :]
    fx = probe.bumps.phi_x.radial(
        np.linalg.norm(base - probe.x_i, axis=-1) / probe.eps)
    out = np.zeros(len(X))
    live = fx > 0.0
    if np.any(live):
        pt, node = np.nonzero(live)
        expo = _line_gauss(model.sigma, X[pt], vels[node], T[pt],
                           spec.sigma_nodes)
        vals = np.zeros_like(fx)
        vals[live] = np.exp(-expo) * fx[live] * wv[node]
        out = vals.sum(axis=1) / probe.eps ** 3
    return out


# --- order 1 ---------------------------------------------------------------

def f1_batch(model, probe, X, T, V, spec: QuadratureSpec):
    """Once-tumbled solution f1(x, t, v), batched.

    Quadrature over the probe's velocity cap (chart coordinates) and over
    the tumble time restricted to the interval where the transported
    initial bump is inside its support.
    """
    X = np.atleast_2d(np.asarray(X, float))
    V = np.atleast_2d(np.asarray(V, float))
    T = np.atleast_1d(np.asarray(T, float))
    n = len(X)
    vels, wv = _phi_v_rule(probe, spec)
    m = len(vels)
    Rx = probe.bumps.phi_x.support_radius * probe.eps

    A0 = X[:, None, :] - vels[None, :, :] * T[:, None, None] - probe.x_i
    B = vels[None, :, :] - V[:, None, :]
    a = np.sum(B * B, axis=-1)
    b = 2.0 * np.sum(A0 * B, axis=-1)
    c0 = np.sum(A0 * A0, axis=-1) - Rx ** 2

    lo = np.zeros((n, m))
    hi = np.zeros((n, m))
    lin = a < _TINY
    # v' ~ v: the support condition does not move with s
    inside = lin & (c0 <= 0.0)
    hi[inside] = np.broadcast_to(T[:, None], (n, m))[inside]
    quad = ~lin
    disc = np.where(quad, b * b - 4.0 * a * c0, -1.0)
    ok = quad & (disc > 0.0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a_safe = np.where(quad, a, 1.0)
    r1 = (-b - sq) / (2.0 * a_safe)
    r2 = (-b + sq) / (2.0 * a_safe)
    lo[ok] = np.maximum(r1, 0.0)[ok]
    hi[ok] = np.minimum(r2, np.broadcast_to(T[:, None], (n, m)))[ok]
    valid = hi > lo
    out = np.zeros(n)
    if not np.any(valid):
        return out

    pt, node = np.nonzero(valid)
    g, wg = _leggauss01(spec.time_nodes)
    span = (hi - lo)[valid]
    s = lo[valid][:, None] + span[:, None] * g[None, :]      # (r, ns)
    ws = span[:, None] * wg[None, :]
    Xr = X[pt][:, None, :]
    Vr = V[pt][:, None, :]
    vpr = vels[node][:, None, :]
    Tr = T[pt][:, None]

    e1 = np.exp(-_line_gauss(model.sigma, Xr, Vr, s, spec.sigma_nodes))
    posK = Xr - Vr * s[..., None]
    kval = model.kernel(posK, Vr, vpr)
    e2 = np.exp(-_line_gauss(model.sigma, posK, vpr, Tr - s, spec.sigma_nodes))
    arg = A0[valid][:, None, :] + s[..., None] * B[valid][:, None, :]
    fx = probe.bumps.phi_x.radial(np.linalg.norm(arg, axis=-1) / probe.eps)
    contrib = np.sum(ws * e1 * kval * e2 * fx, axis=1) * wv[node]
    np.add.at(out, pt, contrib)
    return out / probe.eps ** 3


def eval_f1(model, probe, x, t, v, spec=None):
    """Pointwise once-tumbled solution."""
    spec = spec or QuadratureSpec()
    return float(f1_batch(model, probe, np.asarray(x, float)[None, :],
                          np.array([t]), np.asarray(v, float)[None, :], spec)[0])


def rho1_batch(model, probe, X, T, spec: QuadratureSpec, max_nodes=1_500_000):
    """Velocity average of f1, batched over evaluation points.

    Integration order: pre-tumble velocity v' on the chart disk, tumble
    time s by Gauss on [0, t], post-tumble velocity v on the spherical cap
    where the transported initial bump has support (polar Gauss x uniform
    azimuth around the cap center).
    """
    X = np.atleast_2d(np.asarray(X, float))
    T = np.atleast_1d(np.asarray(T, float))
    n = len(X)
    vels, wv = _phi_v_rule(probe, spec)
    m = len(vels)
    ns = spec.time_nodes
    nmu, naz = spec.cap_polar, spec.cap_azimuth
    Rx = probe.bumps.phi_x.support_radius * probe.eps
    g, wg = _leggauss01(ns)
    gm, wm = np.polynomial.legendre.leggauss(nmu)
    az = 2.0 * np.pi * (np.arange(naz) + 0.5) / naz
    waz = 2.0 * np.pi / naz
    cos_az = np.cos(az)
    sin_az = np.sin(az)

    out = np.zeros(n)
    chunk = max(1, max_nodes // (m * ns * nmu * naz))
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        Xc = X[sl]
        Tc = T[sl]
        c = len(Xc)
        s = Tc[:, None] * g[None, :]                      # (c, ns)
        ws = Tc[:, None] * wg[None, :]
        # cap center direction c_vec = x - v'(t - s) - x_i, per (c, m, ns)
        cvec = (Xc[:, None, None, :]
                - vels[None, :, None, :] * (Tc[:, None, None] - s[:, None, :])[..., None]
                - probe.x_i)
        cn = np.linalg.norm(cvec, axis=-1)
        sb = np.broadcast_to(s[:, None, :], (c, m, ns))
        safe = cn > _TINY
        denom = np.where(safe, 2.0 * sb * cn, 1.0)
        mu_min = np.where(safe,
                          (sb ** 2 + cn ** 2 - Rx ** 2) / denom,
                          np.where(sb <= Rx, -1.0, 2.0))
        mu_min = np.maximum(mu_min, -1.0)
        span = 1.0 - mu_min
        rows = np.flatnonzero((span > 0.0).ravel())
        if rows.size == 0:
            continue
        ci, mi, si = np.unravel_index(rows, (c, m, ns))
        r = rows.size
        chat = np.where(safe.ravel()[rows, None],
                        cvec.reshape(-1, 3)[rows]
                        / np.maximum(cn.ravel()[rows, None], _TINY),
                        np.array([0.0, 0.0, 1.0]))
        fr1, fr2 = _frames(chat)
        mu = (mu_min.ravel()[rows, None]
              + span.ravel()[rows, None] * 0.5 * (gm[None, :] + 1.0))  # (r, nmu)
        wmu = span.ravel()[rows, None] * 0.5 * wm[None, :]
        sin_mu = np.sqrt(np.maximum(1.0 - mu ** 2, 0.0))
        # post-tumble velocities (r, nmu, naz, 3)
        v = (mu[..., None, None] * chat[:, None, None, :]
             + sin_mu[..., None, None]
             * (cos_az[None, None, :, None] * fr1[:, None, None, :]
                + sin_az[None, None, :, None] * fr2[:, None, None, :]))
        sv = sb.ravel()[rows][:, None, None, None]
        Xr = Xc[ci][:, None, None, :]
        vpr = vels[mi][:, None, None, :]
        Trem = (Tc[ci] - s[ci, si])[:, None, None, None]

        e1 = np.exp(-_line_gauss(model.sigma, Xr, v, sv[..., 0],
                                 spec.sigma_nodes))
        posK = Xr - v * sv
        kval = model.kernel(posK, v, vpr)
        e2 = np.exp(-_line_gauss(model.sigma, posK, vpr, Trem[..., 0],
                                 spec.sigma_nodes))
        arg = cvec.reshape(-1, 3)[rows][:, None, None, :] - sv * v
        fx = probe.bumps.phi_x.radial(np.linalg.norm(arg, axis=-1) / probe.eps)
        inner = np.sum((e1 * kval * e2 * fx) * wmu[..., None] * waz,
                       axis=(1, 2))
        contrib = inner * wv[mi] * ws[ci, si]
        np.add.at(out, np.arange(n)[sl][ci], contrib)
    return out / probe.eps ** 3


def eval_rho(model, probe, order, x, t, spec=None, samples=20_000, seed=0):
    """Velocity-averaged density of a single collision order at (x, t).

    Orders 0 and 1 are deterministic; higher orders integrate the Monte
    Carlo order-n evaluator over a full sphere rule by sampling the
    velocity uniformly.
    """
    spec = spec or QuadratureSpec()
    if not 0.0 <= t <= model.horizon:
        raise ValueError(f"time {t} outside [0, {model.horizon}]")
    x = np.asarray(x, float)
    if order == 0:
        return float(rho0_batch(model, probe, x[None, :], np.array([t]), spec)[0])
    if order == 1:
        pts, wts = sphere_quadrature(spec.sphere_order)
        Xr = np.broadcast_to(x, pts.shape)
        Tr = np.full(len(pts), t)
        return float(np.sum(wts * f1_batch(model, probe, Xr, Tr, pts, spec)))
    rng = rng_stream(seed, order)
    v0 = _random_unit(rng, samples)
    w = _chain_batch(rng, model, probe, order,
                     np.broadcast_to(x, (samples, 3)), np.full(samples, t),
                     v0, spec)
    return float(SPHERE_MEASURE * np.mean(w))


# --- Monte Carlo orders ----------------------------------------------------

def _sample_phi_v(rng, probe, n):
    """Rejection samples from the phi_v density on the chart disk."""
    R = probe.bumps.phi_v.support_radius
    out = np.empty((n, 2))
    todo = np.arange(n)
    guard = 0
    while todo.size:
        r = R * np.sqrt(rng.random(todo.size))
        ang = 2.0 * np.pi * rng.random(todo.size)
        u = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
        acc = rng.random(todo.size) < probe.bumps.phi_v.radial(r)
        out[todo[acc]] = u[acc]
        todo = todo[~acc]
        guard += 1
        if guard > 10_000:
            raise NumericsError("phi_v rejection sampler failed to terminate")
    return out


def _chain_batch(rng, model, probe, n_coll, X, T, V0, spec):
    """Importance-sampled weights of n_coll-collision backward histories.

    One weight per row; expectations over rows are unbiased estimates of
    f_n(x, t, v0). Middle tumble times are uniform on their nested simplex
    ranges, middle velocities uniform on the sphere reweighted by the
    kernel, the final pre-collision velocity is drawn from the probe's
    velocity profile, and the final run time is drawn uniformly from the
    interval where the transported initial bump has support.
    """
    m = len(X)
    w = np.ones(m)
    pos = np.array(X, float)
    rem = np.array(T, float)
    cur_v = np.array(V0, float)
    expo = np.zeros(m)
    for _ in range(n_coll - 1):
        s = rng.random(m) * rem
        w *= rem
        expo += _line_gauss(model.sigma, pos, cur_v, s, spec.sigma_nodes)
        pos = pos - cur_v * s[:, None]
        rem = rem - s
        v_next = _random_unit(rng, m)
        w *= SPHERE_MEASURE * model.kernel(pos, cur_v, v_next)
        cur_v = v_next

    u = _sample_phi_v(rng, probe, m)
    v_last = unproject(probe.chart, probe.delta * u)
    w /= v_last @ probe.chart.anchor

    Rx = probe.bumps.phi_x.support_radius * probe.eps
    A0 = pos - v_last * rem[:, None] - probe.x_i
    B = v_last - cur_v
    a = np.sum(B * B, axis=-1)
    b = 2.0 * np.sum(A0 * B, axis=-1)
    c0 = np.sum(A0 * A0, axis=-1) - Rx ** 2
    lo = np.zeros(m)
    hi = np.zeros(m)
    lin = a < _TINY
    hi[lin & (c0 <= 0.0)] = rem[lin & (c0 <= 0.0)]
    disc = np.where(~lin, b * b - 4.0 * np.where(lin, 1.0, a) * c0, -1.0)
    ok = (~lin) & (disc > 0.0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a_safe = np.where(lin, 1.0, a)
    lo[ok] = np.maximum((-b - sq) / (2.0 * a_safe), 0.0)[ok]
    hi[ok] = np.minimum((-b + sq) / (2.0 * a_safe), rem)[ok]
    span = np.maximum(hi - lo, 0.0)
    s_last = lo + rng.random(m) * span
    w *= span

    live = w != 0.0
    if not np.any(live):
        return np.zeros(m)
    expo += np.where(live,
                     _line_gauss(model.sigma, pos, cur_v, s_last,
                                 spec.sigma_nodes), 0.0)
    posK = pos - cur_v * s_last[:, None]
    w *= model.kernel(posK, cur_v, v_last)
    t_rem = rem - s_last
    expo += np.where(live,
                     _line_gauss(model.sigma, posK, v_last, t_rem,
                                 spec.sigma_nodes), 0.0)
    arg = A0 + s_last[:, None] * B
    fx = probe.bumps.phi_x.radial(np.linalg.norm(arg, axis=-1) / probe.eps)
    return w * np.exp(-expo) * fx / probe.eps ** 3


def eval_fn_mc(model, probe, n, x, t, v, samples, seed=0, spec=None,
               chunk=200_000):
    """Monte Carlo estimate of the n-fold collision order f_n(x, t, v).

    Returns (estimate, standard error). Deterministic given the seed.
    """
    if n < 1:
        raise ConfigurationError(f"collision order must be >= 1, got {n}")
    if samples < 100:
        raise ConfigurationError(f"need at least 100 samples, got {samples}")
    spec = spec or QuadratureSpec()
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    rng = rng_stream(seed, n)
    total = 0.0
    total2 = 0.0
    done = 0
    while done < samples:
        mblk = min(chunk, samples - done)
        w = _chain_batch(rng, model, probe, n,
                         np.broadcast_to(x, (mblk, 3)), np.full(mblk, t),
                         np.broadcast_to(v, (mblk, 3)), spec)
        total += w.sum()
        total2 += (w * w).sum()
        done += mblk
    mean = total / samples
    var = max(total2 / samples - mean ** 2, 0.0)
    return mean, np.sqrt(var / samples)


def remainder_bound(N, model: ModelConfig):
    """Analytic tail bound (C_K |V| T)^(N+1) exp(C_K |V| T) for unit-mass probes."""
    product = model.admissibility_product
    if product >= 1.0:
        raise AdmissibilityError(
            f"series remainder bound requires C_K |V| T < 1, got {product:.6g}")
    return product ** (N + 1) * np.exp(product)


@dataclass(frozen=True)
class CollisionEvaluator:
    """Model + probe + quadrature settings bundled for series evaluation."""

    model: ModelConfig
    probe: object
    spec: QuadratureSpec = QuadratureSpec()
    seed: int = 0

    def f0(self, x, t, v):
        return eval_f0(self.model, self.probe, x, t, v)

    def f1(self, x, t, v):
        return eval_f1(self.model, self.probe, x, t, v, spec=self.spec)

    def fn_mc(self, n, x, t, v, samples):
        return eval_fn_mc(self.model, self.probe, n, x, t, v, samples,
                          seed=self.seed, spec=self.spec)

    def rho(self, order, x, t, samples=20_000):
        return eval_rho(self.model, self.probe, order, x, t, spec=self.spec,
                        samples=samples, seed=self.seed)

    def remainder_bound(self, N):
        return remainder_bound(N, self.model)


# --- particle oracle -------------------------------------------------------

@dataclass
class ParticleEnsemble:
    """Trajectories of the velocity-jump process started from the probe data.

    Events are stored padded: ev_time (n, k) with +inf past each particle's
    last jump; ev_pos is the location of the jump, ev_vnew the post-jump
    velocity. All weights are 1; mass is the actual integral of phi.
    """

    count: int
    seed: int
    mass: float
    horizon: float
    x0: np.ndarray
    v0: np.ndarray
    ev_time: np.ndarray
    ev_pos: np.ndarray
    ev_vold: np.ndarray
    ev_vnew: np.ndarray
    jump_counts: np.ndarray

    def states_at(self, t):
        """Positions and velocities of all particles at time t."""
        idx = np.sum(self.ev_time <= t, axis=1)
        has = idx > 0
        base_t = np.zeros(self.count)
        base_x = self.x0.copy()
        base_v = self.v0.copy()
        if self.ev_time.shape[1]:
            j = np.maximum(idx - 1, 0)
            rows = np.arange(self.count)
            base_t[has] = self.ev_time[rows[has], j[has]]
            base_x[has] = self.ev_pos[rows[has], j[has]]
            base_v[has] = self.ev_vnew[rows[has], j[has]]
        return base_x + base_v * (t - base_t)[:, None], base_v

    def dump_trajectories(self, path):
        """Write the event list (particle, time, position, old/new velocity)."""
        with open(path, "w") as fh:
            fh.write("# particle,event_time,x,y,z,vx_old,vy_old,vz_old,"
                     "vx_new,vy_new,vz_new\n")
            for i in range(self.count):
                for j in range(self.jump_counts[i]):
                    row = ([self.ev_time[i, j]] + list(self.ev_pos[i, j])
                           + list(self.ev_vold[i, j]) + list(self.ev_vnew[i, j]))
                    fh.write(str(i) + ","
                             + ",".join(repr(float(x)) for x in row) + "\n")


def _sample_initial(rng, probe, n):
    """Draw (X0, V0) from the normalized probe initial data."""
    Rx = probe.bumps.phi_x.support_radius
    x = np.empty((n, 3))
    todo = np.arange(n)
    while todo.size:
        p = rng.uniform(-Rx, Rx, size=(todo.size, 3))
        r = np.linalg.norm(p, axis=1)
        acc = (r <= Rx) & (rng.random(todo.size) < probe.bumps.phi_x.radial(r))
        x[todo[acc]] = p[acc]
        todo = todo[~acc]
    x = probe.x_i + probe.eps * x

    # chart draw from phi_v, then a second rejection for the extra
    # 1/<v, anchor> factor the printed Jacobian carries
    delta_r = probe.delta * probe.bumps.phi_v.support_radius
    cos_min = (1.0 - delta_r ** 2) / (1.0 + delta_r ** 2)
    v = np.empty((n, 3))
    todo = np.arange(n)
    while todo.size:
        u = _sample_phi_v(rng, probe, todo.size)
        cand = unproject(probe.chart, probe.delta * u)
        cosv = cand @ probe.chart.anchor
        acc = rng.random(todo.size) < cos_min / cosv
        v[todo[acc]] = cand[acc]
        todo = todo[~acc]
    return x, v


def simulate_particles(model: ModelConfig, probe, count, seed,
                       max_reject=10_000):
    """Velocity-jump simulation by thinning against the global majorant.

    Requires the mass-conserving mode (sigma derived from the kernel); the
    majorant is C_sigma = C_K |V|. Post-jump velocities are drawn by
    rejection from K(x, ., v_pre) with envelope C_K.
    """
    if model.sigma.provenance != DERIVED:
        raise AdmissibilityError(
            "particle oracle requires sigma derived from the kernel "
            "(mass-conserving mode)")
    if count < 1:
        raise ConfigurationError(f"particle count must be >= 1, got {count}")
    rng = rng_stream(seed, 0xB10B)
    x0, v0 = _sample_initial(rng, probe, count)
    mass = velocity_mass(probe)
    T = model.horizon
    majorant = model.sigma.bound
    ck = model.kernel.bound

    events = [[] for _ in range(count)]
    if majorant > 0.0:
        t = np.zeros(count)
        x = x0.copy()
        v = v0.copy()
        active = np.arange(count)
        while active.size:
            dt = rng.exponential(1.0 / majorant, size=active.size)
            t_new = t[active] + dt
            alive = t_new < T
            keep = active[alive]
            t[keep] = t_new[alive]
            x[keep] += v[keep] * dt[alive][:, None]
            sig = np.asarray(model.sigma(x[keep], v[keep]), float)
            if np.any(sig > majorant * (1.0 + 1e-12)):
                i = keep[np.argmax(sig)]
                raise AdmissibilityError(
                    f"sigma exceeds the thinning majorant at x={x[i].tolist()}")
            jump = rng.random(keep.size) < sig / majorant
            jumpers = keep[jump]
            if jumpers.size:
                vnew = np.empty((jumpers.size, 3))
                todo = np.arange(jumpers.size)
                guard = 0
                while todo.size:
                    cand = _random_unit(rng, todo.size)
                    kv = np.asarray(model.kernel(x[jumpers[todo]], cand,
                                                 v[jumpers[todo]]), float)
                    if np.any(kv > ck * (1.0 + 1e-12)):
                        i = int(np.argmax(kv))
                        raise AdmissibilityError(
                            "kernel exceeds its declared bound at "
                            f"x={x[jumpers[todo[i]]].tolist()}, "
                            f"v={cand[i].tolist()}")
                    acc = rng.random(todo.size) < kv / ck
                    vnew[todo[acc]] = cand[acc]
                    todo = todo[~acc]
                    guard += 1
                    if guard > max_reject:
                        raise NumericsError(
                            "post-jump velocity rejection failed to terminate")
                for i, p in enumerate(jumpers):
                    events[p].append((t[p], x[p].copy(), v[p].copy(),
                                      vnew[i].copy()))
                v[jumpers] = vnew
            active = keep

    counts = np.array([len(e) for e in events], dtype=int)
    kmax = int(counts.max()) if count else 0
    ev_time = np.full((count, kmax), np.inf)
    ev_pos = np.zeros((count, kmax, 3))
    ev_vold = np.zeros((count, kmax, 3))
    ev_vnew = np.zeros((count, kmax, 3))
    for i, e in enumerate(events):
        for j, (te, xe, vo, vn) in enumerate(e):
            ev_time[i, j] = te
            ev_pos[i, j] = xe
            ev_vold[i, j] = vo
            ev_vnew[i, j] = vn
    return ParticleEnsemble(count=count, seed=seed, mass=mass, horizon=T,
                            x0=x0, v0=v0, ev_time=ev_time, ev_pos=ev_pos,
                            ev_vold=ev_vold, ev_vnew=ev_vnew,
                            jump_counts=counts)
