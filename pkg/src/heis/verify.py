"""Inequality verification at desk scale.

Checks, with explicit Monte-Carlo error bars, the entropy inequality along
Wasserstein geodesics (CD), the Brunn-Minkowski inequality on midpoint
sets (BMI), its strengthening on interpolant supports (SBMI), the
Borell-Brascamp-Lieb inequality on grid functions (BBL), and the Jensen
support bound.  Every check returns a three-valued report: a `fails` on a
theorem-backed inequality signals a defect in the estimators, not in the
theorem, and the report note says so.

Margins are oriented so that margin >= 0 means the inequality holds:
the side the inequality claims to be larger minus the smaller one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core, geodesy
from .distortion import p_mean, tau, tau_tilde
from .geodesy import TWO_PI, NonUniqueGeodesic
from .measures import (
    BoxRegion,
    DiscreteMeasure,
    Region,
    estimate_density,
    estimate_volume,
    normalized_measure,
    renyi_entropy,
    renyi_entropy_estimate,
    sample_uniform,
    step_approximate,
    theta_deviation,
)
from .transport import (
    TransportPlan,
    cost_matrix,
    geodesic_plan,
    interpolate,
    solve_exact,
    w2,
)

__all__ = [
    "InequalityReport",
    "HypothesisViolated",
    "GridFunction",
    "cd_functional",
    "verify_cd",
    "verify_cd_sweep",
    "verify_bmi",
    "verify_bmi_sweep",
    "verify_sbmi",
    "verify_sbmi_sweep",
    "verify_bbl",
    "step_limit_experiment",
    "StepLimitRow",
]

K_SIGMA = 3.0


class HypothesisViolated(ValueError):
    """The pointwise BBL hypothesis failed on a sampled triple (an input
    problem, not a theorem failure); carries the witness."""

    def __init__(self, msg, witness):
        super().__init__(msg)
        self.witness = witness


@dataclass
class InequalityReport:
    """One inequality instance: sides, oriented margin, error bar, verdict."""

    name: str
    s: float
    lhs: float
    rhs: float
    margin: float
    mc_stderr: float
    discretization_note: str = ""
    holds: str = "inconclusive"
    extras: dict = field(default_factory=dict)

    @staticmethod
    def classify(margin: float, stderr: float, k: float = K_SIGMA) -> str:
        if stderr == 0.0:
            return "holds" if margin >= 0 else "fails"
        if abs(margin) < k * stderr:
            return "inconclusive"
        return "holds" if margin >= k * stderr else "fails"

    @classmethod
    def build(cls, name, s, lhs, rhs, margin, stderr, note="", extras=None):
        return cls(
            name=name, s=float(s), lhs=float(lhs), rhs=float(rhs),
            margin=float(margin), mc_stderr=float(stderr),
            discretization_note=note,
            holds=cls.classify(float(margin), float(stderr)),
            extras=extras or {},
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "s": self.s,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "mc_stderr": self.mc_stderr,
            "discretization_note": self.discretization_note,
            "holds": self.holds,
            "extras": self.extras,
        }

    CSV_HEADER = "name,s,lhs,rhs,margin,stderr,holds"

    def csv_row(self) -> str:
        vals = [self.s, self.lhs, self.rhs, self.margin, self.mc_stderr]
        return ",".join([self.name] + [repr(float(v)) for v in vals] + [self.holds])


# ---------------------------------------------------------------------------
# the CD functional and verifier
# ---------------------------------------------------------------------------

def _pair_angles(src_pts, tgt_pts, i, j):
    za, ta = core.to_complex(src_pts[i])
    zb, tb = core.to_complex(tgt_pts[j])
    dz = zb - za
    # Im(za conj(zb)) from real parts so that equal points cancel exactly
    tw = np.sum(za.imag * zb.real - za.real * zb.imag, axis=-1)
    dt = tb - ta - 2.0 * tw
    _, theta, _, _ = geodesy._invert_arrays(dz, dt)
    return np.abs(theta)


def cd_functional(plan: TransportPlan, src: DiscreteMeasure, tgt: DiscreteMeasure,
                  s: float, angles: np.ndarray | None = None) -> float:
    """F^n_s of the plan:

        -sum_ij pi_ij [ tau^n_{1-s}(theta_ij) rho0(x_i)^{-1/(2n+1)}
                        + tau^n_s(theta_ij) rho1(y_j)^{-1/(2n+1)} ].

    Returns -inf when the support contains a theta = 2pi pair (the
    distortion coefficient is infinite there); callers should flag it.
    """
    if src.density is None or tgt.density is None:
        raise ValueError("cd_functional needs marginal densities")
    if angles is None:
        angles = _pair_angles(src.points, tgt.points, plan.i, plan.j)
    e = 2 * src.n + 1
    t0 = tau(src.n, 1.0 - s, angles)
    t1 = tau(src.n, s, angles)
    terms = (t0 * src.density[plan.i] ** (-1.0 / e)
             + t1 * tgt.density[plan.j] ** (-1.0 / e))
    return float(-np.sum(plan.mass * terms))


def _cloud_bound(points, r, h) -> BoxRegion:
    """A box certainly containing the r-thickened cloud, with a grid's
    worth of slack (grids are origin-anchored, so the bound never shifts
    cell boundaries)."""
    points = np.atleast_2d(points)
    zmax = float(np.max(np.sqrt(np.sum(points[:, :-1] ** 2, axis=1))))
    pad_z = r + 2 * h
    pad_t = 2.0 * r * r / np.pi + 2.0 * (zmax + r) * r + 2 * h
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    iv = np.stack([lo, hi], axis=1)
    iv[:-1, 0] -= pad_z
    iv[:-1, 1] += pad_z
    iv[-1, 0] -= pad_t
    iv[-1, 1] += pad_t
    return BoxRegion(iv)


def _weighted_spread(mass, terms):
    """Stderr of a plan-weighted mean, treating supported pairs as a
    weighted iid sample (effective size 1 / sum mass^2)."""
    mean = np.sum(mass * terms)
    var = np.sum(mass * (terms - mean) ** 2)
    neff = 1.0 / np.sum(mass ** 2)
    return float(np.sqrt(max(var, 0.0) / neff))


def _jensen_report(mu_s: DiscreteMeasure, s, h) -> InequalityReport:
    """Ent(mu_s) >= -Leb(spt mu_s)^{1/(2n+1)}, checked with the plug-in
    pair on one grid (the discrete inequality is then exact by Hoelder)."""
    d = mu_s.points.shape[1]
    ent = renyi_entropy(estimate_density(mu_s, h))
    bound = _cloud_bound(mu_s.points, 0.0, h)
    vol = estimate_volume(mu_s.points, 0.0, h, bound)
    rhs = -vol.volume ** (1.0 / d)
    margin = ent - rhs
    return InequalityReport.build(
        "JENSEN", s, lhs=ent, rhs=rhs, margin=margin, stderr=0.0,
        note=f"plug-in entropy vs occupancy volume on the h={h:g} grid",
        extras={"support_volume": vol.volume, "volume_stderr": vol.stderr},
    )


def verify_cd_sweep(A: Region, B: Region, s_values, N: int, seed: int,
                    h: float) -> list[InequalityReport]:
    """Entropy inequality Ent(mu_s) <= F^n_s along the exact-plan geodesic
    between the normalized restrictions of A and B; one report per s.

    lhs is the Richardson-extrapolated histogram entropy of the
    interpolant; rhs uses the exact marginal densities, so its only error
    is the Monte-Carlo spread of the pair terms.  Each report carries a
    JENSEN side-report in extras.
    """
    mu0 = normalized_measure(A, N, seed)
    mu1 = normalized_measure(B, N, seed + 1)
    C = cost_matrix(mu0, mu1, want_chi=True)
    note = f"N={N} h={h:g} exact plan"
    try:
        gp = geodesic_plan(mu0, mu1, C=C)
    except NonUniqueGeodesic as err:
        return [InequalityReport(
            name="CD", s=float(s), lhs=np.nan, rhs=np.nan, margin=np.nan,
            mc_stderr=np.nan, holds="inconclusive",
            discretization_note=f"center pairs in the optimal plan: {err}",
        ) for s in s_values]

    angles = np.abs(C.table.theta[gp.plan.i, gp.plan.j])
    e = 2 * mu0.n + 1
    reports = []
    for s in s_values:
        mu_s = interpolate(gp, s)
        lhs, lhs_err = renyi_entropy_estimate(mu_s, h)
        t0 = tau(mu0.n, 1.0 - s, angles)
        t1 = tau(mu0.n, s, angles)
        terms = (t0 * mu0.density[gp.plan.i] ** (-1.0 / e)
                 + t1 * mu1.density[gp.plan.j] ** (-1.0 / e))
        rhs = float(-np.sum(gp.plan.mass * terms))
        if not np.isfinite(rhs):
            reports.append(InequalityReport(
                name="CD", s=float(s), lhs=lhs, rhs=rhs, margin=np.nan,
                mc_stderr=np.nan, holds="inconclusive",
                discretization_note="infinite distortion coefficient in rhs; "
                                    "claim vacuously strong", ))
            continue
        rhs_err = _weighted_spread(gp.plan.mass, -terms)
        margin = rhs - lhs
        stderr = float(np.hypot(lhs_err, rhs_err))
        rep = InequalityReport.build(
            "CD", s, lhs=lhs, rhs=rhs, margin=margin, stderr=stderr, note=note,
            extras={"w2": float(np.sqrt(gp.plan.cost)),
                    "jensen": _jensen_report(mu_s, s, h).to_json()},
        )
        reports.append(rep)
    return reports


def verify_cd(A: Region, B: Region, s: float, N: int, seed: int,
              h: float) -> InequalityReport:
    return verify_cd_sweep(A, B, [s], N, seed, h)[0]


# ---------------------------------------------------------------------------
# BMI / SBMI
# ---------------------------------------------------------------------------

def _bmi_rhs(n, s, theta_dev, volA, volB, volA_err, volB_err):
    d = 2 * n + 1
    tA = tau(n, 1.0 - s, theta_dev)
    tB = tau(n, s, theta_dev)
    la, lb = volA ** (1.0 / d), volB ** (1.0 / d)
    rhs = tA * la + tB * lb
    # delta method on the volume estimates
    da = tA * la / (d * volA) * volA_err if volA > 0 else 0.0
    db = tB * lb / (d * volB) * volB_err if volB > 0 else 0.0
    return rhs, float(np.hypot(da, db)), tA, tB


def _degenerate_theta_report(name, s, note):
    return InequalityReport(
        name=name, s=float(s), lhs=np.nan, rhs=np.nan, margin=np.nan,
        mc_stderr=np.nan, holds="inconclusive", discretization_note=note)


_THETA_DEGENERATE_NOTE = (
    "Theta = 2pi: A^{-1}*B sits in the center, which forces "
    "Leb(A) = Leb(B) = 0; no content to verify at sample scale")


def verify_bmi_sweep(A: Region, B: Region, s_values, N: int, seed: int,
                     r: float, h: float) -> list[InequalityReport]:
    """Brunn-Minkowski inequality on the sampled midpoint set:

        Leb(Z_s(A,B))^{1/(2n+1)} >=
            tau^n_{1-s}(Theta) Leb(A)^{1/(2n+1)} + tau^n_s(Theta) Leb(B)^{1/(2n+1)}

    All three volumes use the same occupancy estimator (thickening r, grid
    h), so the endpoint margins vanish identically; Theta uses the sampled
    minimum, which can only overestimate the essential infimum and
    therefore only strengthens the claimed bound.
    """
    A_pts = sample_uniform(A, N, seed)
    B_pts = sample_uniform(B, N, seed + 1)
    table = geodesy.pair_table(A_pts, B_pts, want_chi=True)
    theta_dev = theta_deviation(A_pts, B_pts, table=table)
    if theta_dev >= TWO_PI:
        return [_degenerate_theta_report("BMI", s, _THETA_DEGENERATE_NOTE)
                for s in s_values]

    volA = estimate_volume(A_pts, r, h, _cloud_bound(A_pts, r, h))
    volB = estimate_volume(B_pts, r, h, _cloud_bound(B_pts, r, h))
    n = (A_pts.shape[1] - 1) // 2
    d = 2 * n + 1
    reports = []
    for s in s_values:
        Z = geodesy.midpoint_set(s, A_pts, B_pts, table=table)
        volZ = estimate_volume(Z.points, r, h, _cloud_bound(Z.points, r, h))
        lhs = volZ.volume ** (1.0 / d)
        lhs_err = volZ.stderr / (d * volZ.volume ** ((d - 1.0) / d)) if volZ.volume > 0 else 0.0
        rhs, rhs_err, tA, tB = _bmi_rhs(n, s, theta_dev, volA.volume, volB.volume,
                                        volA.stderr, volB.stderr)
        margin = lhs - rhs
        stderr = float(np.hypot(lhs_err, rhs_err))
        reports.append(InequalityReport.build(
            "BMI", s, lhs=lhs, rhs=rhs, margin=margin, stderr=stderr,
            note=f"N={N} r={r:g} h={h:g}; volumes share one estimator",
            extras={"theta": theta_dev, "vol_A": volA.volume, "vol_B": volB.volume,
                    "vol_Z": volZ.volume, "skipped_pairs": Z.skipped,
                    "tau_A": tA, "tau_B": tB},
        ))
    return reports


def verify_bmi(A: Region, B: Region, s: float, N: int, seed: int,
               r: float, h: float) -> InequalityReport:
    return verify_bmi_sweep(A, B, [s], N, seed, r, h)[0]


def verify_sbmi_sweep(A: Region, B: Region, s_values, N: int, seed: int,
                      r: float, h: float) -> list[InequalityReport]:
    """Strong BMI: the midpoint-set volume on the left is replaced by the
    volume of the interpolant support spt((T_s)#eta) along the exact plan.
    Reports also carry the BMI left side and the containment margin
    lhs_SBMI <= lhs_BMI (the support sits inside the midpoint set).
    """
    mu0 = normalized_measure(A, N, seed)
    mu1 = normalized_measure(B, N, seed + 1)
    C = cost_matrix(mu0, mu1, want_chi=True)
    theta_dev = float(np.min(np.abs(C.table.theta)))
    if theta_dev >= TWO_PI:
        return [_degenerate_theta_report("SBMI", s, _THETA_DEGENERATE_NOTE)
                for s in s_values]
    try:
        gp = geodesic_plan(mu0, mu1, C=C)
    except NonUniqueGeodesic as err:
        return [_degenerate_theta_report(
            "SBMI", s, f"center pairs in the optimal plan: {err}")
            for s in s_values]

    volA = estimate_volume(mu0.points, r, h, _cloud_bound(mu0.points, r, h))
    volB = estimate_volume(mu1.points, r, h, _cloud_bound(mu1.points, r, h))
    n = mu0.n
    d = 2 * n + 1
    reports = []
    for s in s_values:
        mu_s = interpolate(gp, s)
        volS = estimate_volume(mu_s.points, r, h, _cloud_bound(mu_s.points, r, h))
        Z = geodesy.midpoint_set(s, mu0.points, mu1.points, table=C.table)
        volZ = estimate_volume(Z.points, r, h, _cloud_bound(Z.points, r, h))
        lhs = volS.volume ** (1.0 / d)
        lhs_err = volS.stderr / (d * volS.volume ** ((d - 1.0) / d)) if volS.volume > 0 else 0.0
        lhs_bmi = volZ.volume ** (1.0 / d)
        lhs_bmi_err = volZ.stderr / (d * volZ.volume ** ((d - 1.0) / d)) if volZ.volume > 0 else 0.0
        rhs, rhs_err, tA, tB = _bmi_rhs(n, s, theta_dev, volA.volume, volB.volume,
                                        volA.stderr, volB.stderr)
        margin = lhs - rhs
        stderr = float(np.hypot(lhs_err, rhs_err))
        reports.append(InequalityReport.build(
            "SBMI", s, lhs=lhs, rhs=rhs, margin=margin, stderr=stderr,
            note=f"N={N} r={r:g} h={h:g}; exact plan interpolant support",
            extras={"theta": theta_dev, "vol_A": volA.volume, "vol_B": volB.volume,
                    "vol_support": volS.volume, "lhs_bmi": lhs_bmi,
                    "lhs_bmi_stderr": lhs_bmi_err,
                    "containment_margin": lhs_bmi - lhs,
                    "containment_stderr": float(np.hypot(lhs_err, lhs_bmi_err)),
                    "tau_A": tA, "tau_B": tB},
        ))
    return reports


def verify_sbmi(A: Region, B: Region, s: float, N: int, seed: int,
                r: float, h: float) -> InequalityReport:
    return verify_sbmi_sweep(A, B, [s], N, seed, r, h)[0]


# ---------------------------------------------------------------------------
# Borell-Brascamp-Lieb on grid functions
# ---------------------------------------------------------------------------

@dataclass
class GridFunction:
    """Piecewise-constant nonnegative function on a box grid (0 outside)."""

    box: BoxRegion
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.box.intervals.shape[0]:
            raise ValueError("values must have one axis per coordinate")
        if np.any(self.values < 0):
            raise ValueError("grid function must be nonnegative")

    @property
    def widths(self) -> np.ndarray:
        iv = self.box.intervals
        return (iv[:, 1] - iv[:, 0]) / np.asarray(self.values.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @classmethod
    def indicator(cls, region: Region, box: BoxRegion, shape, scale: float = 1.0):
        """scale * 1_region sampled at cell centers of the given grid."""
        shape = tuple(shape)
        widths = (box.intervals[:, 1] - box.intervals[:, 0]) / np.asarray(shape)
        axes = [box.intervals[k, 0] + (np.arange(m) + 0.5) * widths[k]
                for k, m in enumerate(shape)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))
        vals = np.where(region.contains(centers), scale, 0.0).reshape(shape)
        return cls(box=box, values=vals)

    def value_at(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (p - self.box.intervals[:, 0]) / self.widths
        idx = np.floor(rel).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.values.shape)), axis=1)
        out = np.zeros(len(p))
        if np.any(inside):
            out[inside] = self.values[tuple(idx[inside].T)]
        return out

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def support_points(self, k: int, rng) -> np.ndarray:
        """k points uniform on the (cellwise) support."""
        flat = np.nonzero(self.values.ravel() > 0)[0]
        if len(flat) == 0:
            raise ValueError("grid function has empty support")
        pick = flat[rng.integers(0, len(flat), size=k)]
        idx = np.stack(np.unravel_index(pick, self.values.shape), axis=1)
        return (self.box.intervals[:, 0] + (idx + rng.random((k, idx.shape[1])))
                * self.widths)


def _bbl_exponent(n: int, p: float) -> float:
    d = 2 * n + 1
    if np.isposinf(p):
        return 1.0 / d
    if p == 0.0:
        return 0.0
    denom = 1.0 + d * p
    if denom == 0.0:
        return -np.inf
    return p / denom


def verify_bbl(f: GridFunction, g: GridFunction, h_fn: GridFunction,
               s: float, p: float, n_samples: int = 2000, seed: int = 0,
               pairing: str = "independent") -> InequalityReport:
    """Borell-Brascamp-Lieb check: the hypothesis

        h(z) >= M_s^p( f(x) / tau~^n_{1-s}(theta(y,x))^{2n+1},
                       g(y) / tau~^n_s(theta(x,y))^{2n+1} )

    is CHECKED on sampled triples (x, y, z = Z_s(x, y)) before comparing

        integral h >= M_s^{p/(1+(2n+1)p)}(integral f, integral g).

    `pairing` = "independent" samples x and y separately from the supports
    of f and g; "diagonal" couples them (x = y draws), matching coupled
    instantiations where the hypothesis is only meant along a plan.
    Raises HypothesisViolated with a witness triple when the bound fails.
    """
    n = (f.box.intervals.shape[0] - 1) // 2
    d = 2 * n + 1
    if not 0.0 < s < 1.0:
        raise ValueError("verify_bbl needs s strictly inside (0, 1)")
    if p < -1.0 / d:
        raise ValueError(f"p must be >= -1/(2n+1) = {-1.0 / d:g}")

    if np.all(f.values == 0.0) or np.all(g.values == 0.0):
        n_samples = 0  # every pointwise bound is M(0, .) = 0: vacuous
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    if n_samples > 0:
        xs = f.support_points(n_samples, rng)
        if pairing == "independent":
            ys = g.support_points(n_samples, rng)
        elif pairing == "diagonal":
            ys = xs.copy()
        else:
            raise ValueError(f"unknown pairing {pairing!r}")
    else:
        xs = ys = np.empty((0, f.box.intervals.shape[0]))

    fx = f.value_at(xs) if n_samples else np.empty(0)
    gy = g.value_at(ys) if n_samples else np.empty(0)
    slack = 1e-9
    for k in range(n_samples):
        if fx[k] == 0.0 and gy[k] == 0.0:
            continue
        th = geodesy.angle(xs[k], ys[k])
        if th >= TWO_PI:
            continue  # non-unique midpoint; the coefficient is infinite anyway
        z = geodesy.midpoint(s, xs[k], ys[k])
        ta = tau_tilde(n, 1.0 - s, th)
        tb = tau_tilde(n, s, th)
        arg_a = fx[k] / ta ** d if np.isfinite(ta) else 0.0
        arg_b = gy[k] / tb ** d if np.isfinite(tb) else 0.0
        bound = p_mean(p, s, arg_a, arg_b)
        hz = float(h_fn.value_at(z[None, :])[0])
        if hz < bound - slack:
            raise HypothesisViolated(
                f"h(z) = {hz:g} < required {bound:g} at sampled triple",
                witness={"x": xs[k].tolist(), "y": ys[k].tolist(),
                         "z": z.tolist(), "h_z": hz, "bound": bound},
            )

    If = f.integral()
    Ig = g.integral()
    Ih = h_fn.integral()
    q = _bbl_exponent(n, p)
    rhs = p_mean(q, s, If, Ig)
    margin = Ih - rhs
    return InequalityReport.build(
        "BBL", s, lhs=Ih, rhs=rhs, margin=margin, stderr=0.0,
        note=f"hypothesis checked on {n_samples} {pairing} triples",
        extras={"integral_f": If, "integral_g": Ig, "exponent": q, "p": p},
    )


# ---------------------------------------------------------------------------
# step-measure limit experiment
# ---------------------------------------------------------------------------

@dataclass
class StepLimitRow:
    depth: int | None  # None marks the un-approximated reference row
    w2_error: float
    f_value: float


def step_limit_experiment(mu: DiscreteMeasure, nu: DiscreteMeasure,
                          depths, s: float, K: Region | None = None) -> list[StepLimitRow]:
    """Step-approximate both marginals at each depth, re-solve transport,
    and report the approximation error max(W2(step mu, mu), W2(step nu, nu))
    together with F^n_s of the step plan.  The final row (depth None) is
    the un-approximated functional.  K is the partitioned region (default:
    the support hull of each marginal).
    """
    if mu.density is None or nu.density is None:
        raise ValueError("step_limit_experiment needs bounded measures with densities")
    K_mu = K if K is not None else _cloud_bound(mu.points, 0.0, 0.0)
    K_nu = K if K is not None else _cloud_bound(nu.points, 0.0, 0.0)
    rows = []
    for depth in depths:
        sm_mu = step_approximate(mu, K_mu, depth).as_discrete()
        sm_nu = step_approximate(nu, K_nu, depth).as_discrete()
        err = max(w2(sm_mu, mu), w2(sm_nu, nu))
        plan = solve_exact(cost_matrix(sm_mu, sm_nu), sm_mu.weights, sm_nu.weights)
        rows.append(StepLimitRow(depth=int(depth), w2_error=err,
                                 f_value=cd_functional(plan, sm_mu, sm_nu, s)))
    plan = solve_exact(cost_matrix(mu, nu), mu.weights, nu.weights)
    rows.append(StepLimitRow(depth=None, w2_error=0.0,
                             f_value=cd_functional(plan, mu, nu, s)))
    return rows
