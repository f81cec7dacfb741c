"""Stiff SDE model and linear-implicit Euler machinery.

The systems treated here have the form

    dY_t = (-A Y_t + mu(t, Y_t)) dt + sigma(t, Y_t) dB_t,

where A captures the stiff linear part (positive semidefinite inner
product, operator norm polynomial in d) and (mu, sigma) satisfy a one-sided
monotonicity condition with constants (beta, eta).  The scheme is implicit
only in the linear term:

    (I + hA) Y_{n+1} = Y_n + h mu(t_n, Y_n) + sigma(t_n, Y_n) dB_{n+1},

with the initial state projected once through (I + hA)^{-1}.  Running the
scheme with network-realized coefficients at sup-distance gamma from the
exact ones is the "perturbed" variant; gamma = 0 recovers the exact scheme.

Brownian increments come from a counter-based generator so the increment of
path m at step n is a pure function of (seed, m, n): step n draws a block
keyed by (seed, n) and path m reads row m.  Path sets are therefore
identical no matter how work is scheduled.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve
from scipy.integrate import quad_vec

__all__ = [
    "StiffSystem",
    "EulerConfig",
    "PathBundle",
    "coarsen",
    "PerturbedCoefficients",
    "exact_coefficients",
    "ValidationReport",
    "validate_system",
    "ImplicitFactor",
    "implicit_factor",
    "step_pes",
    "simulate",
    "ou_exact_value",
    "alpha_p",
    "alpha_one",
    "moment_bound",
    "discrete_moment_bound",
    "gap_bound",
    "step_floor",
    "strong_rate_study",
    "weak_rate_study",
    "coupled_gap_check",
    "moment_check",
    "fit_loglog_slope",
]


@dataclass(frozen=True)
class StiffSystem:
    """SDE data plus the constants the error analysis runs on.

    mu(t, x) and sigma(t, x) must vectorize over a leading path axis:
    x of shape (M, d) yields drift (M, d) and diffusion (M, d, d) (a
    constant (d, d) diffusion return is also accepted).
    """

    d: int
    A: np.ndarray
    mu: Callable
    sigma: Callable
    beta: float
    eta: float
    mu_l0: float = 0.0
    mu_l1: float = 0.0
    sigma_l0: float = 0.0
    sigma_l1: float = 0.0
    kappa0: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if A.shape != (self.d, self.d):
            raise ValueError("A must be d x d")
        object.__setattr__(self, "A", A)
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        op = np.linalg.norm(A, 2)
        cap = self.kappa0 * self.d**self.kappa0
        if op > cap * (1.0 + 1e-12):
            raise ValueError(
                "operator norm %.6g exceeds declared kappa0 d^kappa0 = %.6g"
                % (op, cap)
            )


@dataclass(frozen=True)
class EulerConfig:
    horizon: float
    steps: int

    @property
    def h(self):
        return self.horizon / self.steps

    def grid(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)


def step_floor(horizon, beta, eta):
    """Minimal step count for the scheme's stability and rate guarantees."""
    r = 2.0 ** (1.0 / horizon)
    return horizon * max((2.0 * beta + r) / (r - 1.0), 1.0 / eta, 2.0 * eta, 2.0 / eta)


class PathBundle:
    """Seeded Brownian increments for M paths and N steps of size h.

    increments(n) returns the (M, d) block for step n; the value in row m
    is a pure function of (seed, m, n, d), independent of M, N and of call
    order, because each step has its own counter-based stream.
    """

    def __init__(self, seed, n_paths, n_steps, d, h):
        self.seed = int(seed)
        self.n_paths = int(n_paths)
        self.n_steps = int(n_steps)
        self.d = int(d)
        self.h = float(h)

    def increments(self, n):
        if not 0 <= n < self.n_steps:
            raise IndexError("step %d out of range" % n)
        key = np.array([self.seed, n], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        block = rng.standard_normal((self.n_paths, self.d))
        return block * np.sqrt(self.h)

    def all_increments(self):
        return np.stack([self.increments(n) for n in range(self.n_steps)])


class _CoarseBundle:
    def __init__(self, fine, factor):
        if fine.n_steps % factor != 0:
            raise ValueError("coarsening factor must divide the fine step count")
        self.fine = fine
        self.factor = int(factor)
        self.seed = fine.seed
        self.n_paths = fine.n_paths
        self.n_steps = fine.n_steps // self.factor
        self.d = fine.d
        self.h = fine.h * self.factor

    def increments(self, n):
        if not 0 <= n < self.n_steps:
            raise IndexError("step %d out of range" % n)
        total = self.fine.increments(n * self.factor)
        for j in range(1, self.factor):
            total = total + self.fine.increments(n * self.factor + j)
        return total


def coarsen(bundle, factor):
    """View of a bundle with increments summed over groups of `factor`."""
    if factor == 1:
        return bundle
    return _CoarseBundle(bundle, factor)


@dataclass(frozen=True)
class PerturbedCoefficients:
    """Drift/diffusion callables together with their sup-norm defect gamma."""

    mu: Callable
    sigma: Callable
    gamma: float = 0.0


def exact_coefficients(sys):
    return PerturbedCoefficients(mu=sys.mu, sigma=sys.sigma, gamma=0.0)


@dataclass
class ValidationReport:
    passed: bool
    worst_margin: float
    worst_witness: Optional[tuple] = None
    checks: dict = field(default_factory=dict)


def _sigma_at(sigma, t, x):
    s = np.asarray(sigma(t, x), dtype=np.float64)
    if s.ndim == 2:
        s = np.broadcast_to(s, x.shape[:-1] + s.shape)
    return s


def validate_system(sys, trials=1000, horizon=1.0, seed=0, scale=2.0):
    """Spot-check the monotonicity and regularity hypotheses by sampling.

    Draws random (t, x, y) and checks
      <x-y, dmu> + eta|dmu|^2 + (1+eta)/2 |dsigma|_F^2
        <= beta |x-y|^2 + <x-y, A(x-y)>,
    plus the declared Lipschitz/displacement seminorms and <x, Ax> >= 0.
    Returns the worst margin (min of rhs - lhs); any negative margin beyond
    round-off fails the report with a witness triple.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    d = sys.d
    ts = rng.uniform(0.0, horizon, trials)
    xs = rng.normal(0.0, scale, (trials, d))
    ys = rng.normal(0.0, scale, (trials, d))

    worst = np.inf
    witness = None
    lip_ok = True
    for t, x, y in zip(ts, xs, ys):
        dmu = np.asarray(sys.mu(t, x)) - np.asarray(sys.mu(t, y))
        ds = _sigma_at(sys.sigma, t, x[None]) - _sigma_at(sys.sigma, t, y[None])
        diff = x - y
        lhs = (
            diff @ dmu
            + sys.eta * dmu @ dmu
            + 0.5 * (1.0 + sys.eta) * np.sum(ds * ds)
        )
        rhs = sys.beta * diff @ diff + diff @ (sys.A @ diff)
        margin = rhs - lhs
        if margin < worst:
            worst = margin
            witness = (float(t), x.copy(), y.copy())
        # regularity: spatial increments bounded by the declared seminorms
        dn = np.linalg.norm(diff)
        if np.linalg.norm(dmu) > sys.mu_l1 * dn * (1 + 1e-9) + 1e-12:
            lip_ok = False
        if np.sqrt(np.sum(ds * ds)) > sys.sigma_l1 * dn * (1 + 1e-9) + 1e-12:
            lip_ok = False

    zero = np.zeros(d)
    disp_mu = max(
        np.linalg.norm(np.asarray(sys.mu(t, zero))) for t in ts[: min(trials, 64)]
    )
    disp_sigma = max(
        np.sqrt(np.sum(_sigma_at(sys.sigma, t, zero[None]) ** 2))
        for t in ts[: min(trials, 64)]
    )
    psd_ok = all(float(x @ (sys.A @ x)) >= -1e-10 * (x @ x) for x in xs[:100])

    tol = -1e-9 * max(1.0, abs(worst))
    checks = {
        "monotonicity_worst_margin": float(worst),
        "psd_quadratic_form": psd_ok,
        "lipschitz_within_seminorms": lip_ok,
        "mu_displacement": float(disp_mu),
        "mu_displacement_bound": sys.mu_l0,
        "sigma_displacement": float(disp_sigma),
        "sigma_displacement_bound": sys.sigma_l0,
    }
    passed = (
        worst >= tol
        and psd_ok
        and lip_ok
        and disp_mu <= sys.mu_l0 * (1 + 1e-9) + 1e-12
        and disp_sigma <= sys.sigma_l0 * (1 + 1e-9) + 1e-12
    )
    return ValidationReport(passed, float(worst), witness if not passed else None, checks)


class ImplicitFactor:
    """LU factorization of I + hA, reused across all steps and paths."""

    def __init__(self, A, h):
        A = np.asarray(A, dtype=np.float64)
        d = A.shape[0]
        self.A = A
        self.h = float(h)
        self.d = d
        system = np.eye(d) + self.h * A
        try:
            self._lu = lu_factor(system)
        except Exception as exc:  # singular => hypothesis violated upstream
            raise np.linalg.LinAlgError(
                "I + hA is singular; <x, Ax> >= 0 cannot hold"
            ) from exc
        if not np.all(np.isfinite(self._lu[0])):
            raise np.linalg.LinAlgError("I + hA factorization is not finite")

    def solve(self, r):
        """Solve (I + hA) z = r for a vector or a batch (..., d)."""
        r = np.asarray(r, dtype=np.float64)
        if r.ndim == 1:
            return lu_solve(self._lu, r)
        flat = r.reshape(-1, self.d)
        return lu_solve(self._lu, flat.T).T.reshape(r.shape)

    def inverse(self):
        """Explicit (I + hA)^{-1}, for folding into network layers."""
        return lu_solve(self._lu, np.eye(self.d))

    def check_contraction(self, probes=100, seed=0):
        """Remark-level sanity: both solve and hA*solve are nonexpansive."""
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        ok = True
        for _ in range(probes):
            r = rng.normal(0.0, 1.0, self.d)
            z = self.solve(r)
            rn = np.linalg.norm(r)
            if np.linalg.norm(z) > rn * (1 + 1e-12):
                ok = False
            if np.linalg.norm(self.h * (self.A @ z)) > rn * (1 + 1e-12):
                ok = False
        return ok


def implicit_factor(A, h):
    return ImplicitFactor(A, h)


def step_pes(factor, coeffs, y, t_n, db):
    """One scheme step: (I+hA)^{-1}(y + h mu(t,y) + sigma(t,y) db)."""
    h = factor.h
    drift = np.asarray(coeffs.mu(t_n, y), dtype=np.float64)
    s = _sigma_at(coeffs.sigma, t_n, y)
    noise = np.einsum("...ij,...j->...i", s, db)
    out = factor.solve(y + h * drift + noise)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("scheme state became nonfinite (blow-up)")
    return out


def simulate(sys, coeffs, x0, cfg, bundle, record=None):
    """Run the scheme for all paths in the bundle.

    Returns the (M, d) endpoint matrix, or (endpoints, snapshots) when
    `record` is an iterable of step indices (0 = after the initial
    projection); snapshots maps index -> (M, d) state copy.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != sys.d:
        raise ValueError("x0 has wrong dimension")
    if bundle.n_steps < cfg.steps:
        raise ValueError("bundle has fewer steps than the configuration")
    factor = ImplicitFactor(sys.A, cfg.h)
    y = factor.solve(np.broadcast_to(x0, (bundle.n_paths, sys.d)).copy())
    snapshots = {}
    wanted = set(int(i) for i in record) if record is not None else None
    if wanted is not None and 0 in wanted:
        snapshots[0] = y.copy()
    grid = cfg.grid()
    for n in range(cfg.steps):
        y = step_pes(factor, coeffs, y, grid[n], bundle.increments(n))
        if wanted is not None and (n + 1) in wanted:
            snapshots[n + 1] = y.copy()
    if wanted is not None:
        return y, snapshots
    return y


def ou_exact_value(A, sigma0, betaw, x0, horizon):
    """E sum_m beta_m (Y_m)^2 at time T for dY = -AY dt + sigma0 dB.

    Mean is exp(-TA) x0; the covariance integral of the matrix exponential
    is evaluated by adaptive quadrature (robust for singular A).
    """
    A = np.asarray(A, dtype=np.float64)
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    betaw = np.asarray(betaw, dtype=np.float64).reshape(-1)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    mean = expm(-horizon * A) @ x0
    q = sigma0 @ sigma0.T

    def integrand(s):
        e = expm(-s * A)
        return e @ q @ e.T

    cov, _ = quad_vec(integrand, 0.0, horizon, epsabs=1e-12, epsrel=1e-12)
    return float(betaw @ (mean**2 + np.diag(cov)))


def alpha_p(sys, p):
    """Explicit moment constant for exponents p in [2, 2+eta)."""
    eta = sys.eta
    if not 2.0 <= p < 2.0 + eta:
        raise ValueError("p must lie in [2, 2+eta)")
    gap = eta + 2.0 - p
    return (0.5 + eta * (p - 2.0) / gap) * sys.mu_l0**2 + (
        (1.0 + eta) * (p - 1.0) / (2.0 * gap)
    ) * sys.sigma_l0**2


def alpha_one(sys):
    return (1.0 + sys.eta) ** 2 * (sys.mu_l0**2 + sys.sigma_l0**2) / sys.eta


def moment_bound(sys, x0, horizon, p):
    x0n = float(np.linalg.norm(x0))
    return (
        2.0 ** ((p - 2.0) / 2.0)
        * (alpha_p(sys, p) + x0n**p)
        * np.exp(p * (sys.beta + 0.5) * horizon)
    )


def discrete_moment_bound(sys, x0, horizon):
    x0n2 = float(np.dot(x0, x0))
    return 3.0 * np.exp((2.0 * sys.beta + 1.0) * horizon) * (
        x0n2 + alpha_one(sys) * horizon
    )


def gap_bound(sys, horizon, gamma):
    return (
        np.exp((2.0 * sys.beta + 1.0) * horizon)
        * horizon
        * (1.0 + sys.eta)
        * gamma**2
        / sys.eta
    )


def fit_loglog_slope(hs, errors, magnitude=1.0):
    """Least-squares slope of log error vs log h.

    The coarsest point is discarded when its error exceeds half the state
    magnitude (pre-asymptotic regime guard).  Points with zero error are
    excluded; if fewer than two points remain the slope is NaN.
    """
    hs = np.asarray(hs, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    order = np.argsort(hs)
    hs, errors = hs[order], errors[order]
    if errors[-1] > 0.5 * magnitude and len(hs) > 2:
        hs, errors = hs[:-1], errors[:-1]
    mask = errors > 0.0
    if mask.sum() < 2:
        return float("nan")
    slope = np.polyfit(np.log(hs[mask]), np.log(errors[mask]), 1)[0]
    return float(slope)


_REF_REFINE = 64


def strong_rate_study(sys, coeffs, x0, n_list, horizon, seed, n_paths):
    """Strong error vs step size against a 64x-refined same-noise run.

    For each N the coarse scheme uses increments summed from the fine grid,
    so coarse and reference runs share one Brownian path per sample.  The
    per-N error is max over grid times of (E |Y_coarse - Y_ref|^2)^(1/2).
    """
    n_list = sorted(int(n) for n in n_list)
    n_ref = _REF_REFINE * max(n_list)
    fine_bundle = PathBundle(seed, n_paths, n_ref, sys.d, horizon / n_ref)
    base = min(n_list)
    checkpoints = [k * (n_ref // max(n_list)) for k in range(max(n_list) + 1)]
    _, ref_snaps = simulate(
        sys,
        exact_coefficients(sys),
        x0,
        EulerConfig(horizon, n_ref),
        fine_bundle,
        record=checkpoints,
    )

    magnitude = float(np.sqrt(np.mean(ref_snaps[checkpoints[-1]] ** 2) * sys.d))
    rows = []
    for n in n_list:
        factor = n_ref // n
        bundle = coarsen(fine_bundle, factor)
        cfg = EulerConfig(horizon, n)
        _, snaps = simulate(sys, coeffs, x0, cfg, bundle, record=range(n + 1))
        worst = 0.0
        worst_se = 0.0
        for k in range(n + 1):
            ref = ref_snaps[k * factor]
            sq = np.sum((snaps[k] - ref) ** 2, axis=1)
            mean_sq = float(np.mean(sq))
            if mean_sq > worst:
                worst = mean_sq
                worst_se = float(np.std(sq) / np.sqrt(len(sq)))
        err = np.sqrt(worst)
        stderr = 0.0 if worst == 0.0 else worst_se / (2.0 * max(err, 1e-300))
        rows.append({"N": n, "h": horizon / n, "strong_err": err, "stderr": stderr})
    slope = fit_loglog_slope(
        [r["h"] for r in rows], [r["strong_err"] for r in rows], magnitude
    )
    return {"rows": rows, "slope": slope, "base_N": base, "ref_N": n_ref}


def weak_rate_study(sys, coeffs, cost, x0, n_list, horizon, seed, n_paths, oracle=None):
    """Weak error |E f(Y_T) - mean f~_D(Y~_N)| per step count.

    `cost` must expose f (exact), and net realization f_tilde plus defect
    theta.  When no closed-form oracle is supplied the reference is the
    exact-coefficient scheme on the 64x-refined grid with the untruncated
    cost.
    """
    n_list = sorted(int(n) for n in n_list)
    n_ref = _REF_REFINE * max(n_list)
    fine_bundle = PathBundle(seed, n_paths, n_ref, sys.d, horizon / n_ref)
    if oracle is None:
        ref_end = simulate(
            sys, exact_coefficients(sys), x0, EulerConfig(horizon, n_ref), fine_bundle
        )
        oracle = float(np.mean(cost.f(ref_end)))
    rows = []
    for n in n_list:
        bundle = coarsen(fine_bundle, n_ref // n)
        end = simulate(sys, coeffs, x0, EulerConfig(horizon, n), bundle)
        vals = cost.f_tilde(end)
        est = float(np.mean(vals))
        stderr = float(np.std(vals) / np.sqrt(len(vals)))
        rows.append(
            {
                "N": n,
                "h": horizon / n,
                "weak_err": abs(est - oracle),
                "stderr": stderr,
            }
        )
    slope = fit_loglog_slope([r["h"] for r in rows], [r["weak_err"] for r in rows])
    return {"rows": rows, "slope": slope, "oracle": oracle, "theta": cost.theta}


def coupled_gap_check(sys, coeffs, x0, cfg, bundle):
    """Exact-vs-perturbed scheme gap on shared noise, with its bound.

    Reports max over grid times of E |Y_n - Y~_n|^2, the closed-form bound
    exp((2 beta + 1) T) T (1+eta) gamma^2 / eta, and the MC stderr at the
    maximizing time.
    """
    record = range(cfg.steps + 1)
    _, snaps_exact = simulate(sys, exact_coefficients(sys), x0, cfg, bundle, record)
    _, snaps_pert = simulate(sys, coeffs, x0, cfg, bundle, record)
    worst = 0.0
    worst_se = 0.0
    for k in record:
        sq = np.sum((snaps_exact[k] - snaps_pert[k]) ** 2, axis=1)
        mean_sq = float(np.mean(sq))
        if mean_sq >= worst:
            worst = mean_sq
            worst_se = float(np.std(sq) / np.sqrt(len(sq)))
    return {
        "gap": worst,
        "stderr": worst_se,
        "bound": gap_bound(sys, cfg.horizon, coeffs.gamma),
        "gamma": coeffs.gamma,
    }


def moment_check(sys, x0, cfg, bundle, p=2.0):
    """One-sided MC checks of the explicit moment estimates.

    Continuous-time bound at T (via the fine scheme as proxy), the discrete
    max-over-grid second-moment bound, and a two-chain one-step stability
    probe.  Each estimate must sit below bound + 3 stderr.
    """
    record = range(cfg.steps + 1)
    end, snaps = simulate(sys, exact_coefficients(sys), x0, cfg, bundle, record)

    norms_p = np.sum(end**2, axis=1) ** (p / 2.0)
    est_p = float(np.mean(norms_p))
    se_p = float(np.std(norms_p) / np.sqrt(len(norms_p)))
    bound_p = float(moment_bound(sys, x0, cfg.horizon, p))

    worst2 = 0.0
    worst2_se = 0.0
    for k in record:
        sq = np.sum(snaps[k] ** 2, axis=1)
        m = float(np.mean(sq))
        if m >= worst2:
            worst2 = m
            worst2_se = float(np.std(sq) / np.sqrt(len(sq)))
    bound2 = float(discrete_moment_bound(sys, x0, cfg.horizon))

    # one-step stability: for h <= 2 eta two coupled chains satisfy
    #   E[|dz|^2 + 2h <dz, A dz>] <= E[(1+2 beta h)|dy|^2 + 2h <dy, A dy>]
    stable_ok = True
    if cfg.h <= 2.0 * sys.eta:
        factor = ImplicitFactor(sys.A, cfg.h)
        rng = np.random.Generator(np.random.Philox(key=np.uint64(bundle.seed ^ 0x5A17)))
        y1 = rng.normal(0.0, 1.0, (bundle.n_paths, sys.d))
        y2 = rng.normal(0.0, 1.0, (bundle.n_paths, sys.d))
        db = bundle.increments(0)
        z1 = step_pes(factor, exact_coefficients(sys), y1, 0.0, db)
        z2 = step_pes(factor, exact_coefficients(sys), y2, 0.0, db)
        zd = z1 - z2
        yd = y1 - y2
        lhs = np.sum(zd**2, axis=1) + 2.0 * cfg.h * np.einsum(
            "ij,ij->i", zd, zd @ sys.A.T
        )
        rhs = (1.0 + 2.0 * sys.beta * cfg.h) * np.sum(yd**2, axis=1) + (
            2.0 * cfg.h
        ) * np.einsum("ij,ij->i", yd, yd @ sys.A.T)
        diff = lhs - rhs
        se = float(np.std(diff) / np.sqrt(len(diff)))
        stable_ok = float(np.mean(diff)) <= 3.0 * se + 1e-12

    return {
        "p": p,
        "moment_est": est_p,
        "moment_stderr": se_p,
        "moment_bound": bound_p,
        "moment_ok": est_p <= bound_p + 3.0 * se_p,
        "discrete_est": worst2,
        "discrete_stderr": worst2_se,
        "discrete_bound": bound2,
        "discrete_ok": worst2 <= bound2 + 3.0 * worst2_se,
        "one_step_stable": stable_ok,
    }
