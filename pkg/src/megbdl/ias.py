r"""Iterative Alternating Sequential (IAS) MAP estimation.

Minimizes, over coefficients ``z`` and unit variances ``theta``,

.. math::

    \tfrac12 \|A z - b\|^2 + \sum_u \frac{z_u^T G_u^{-1} z_u}{2\theta_u}
    + \sum_u (\theta_u / \vartheta_u)^r + \sum_u \kappa_u \log\theta_u

by alternating an exact quadratic update of ``z`` with a componentwise update
of ``theta``.  Units are either groups of coefficients with a structural
covariance ``G_u`` or single coefficients with ``G_u = 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve, solve_triangular

from .errors import NumericalError

THETA_FLOOR = 1e-12
NEWTON_RTOL = 1e-12


@dataclass(frozen=True)
class Schedule:
    max_iter_r1: int = 150
    max_iter_rhalf: int = 150
    tol: float = 1e-4
    hybrid: bool = True


@dataclass(frozen=True, eq=False)
class IasProblem:
    """Whitened linear model with a partition of the columns into units.

    ``chol`` holds the lower Cholesky factor of every unit covariance, or is
    ``None`` when all units are scalars with unit covariance.
    """

    A: np.ndarray
    b: np.ndarray
    offsets: np.ndarray
    hyper: object
    chol: list | None = None
    unit_of: np.ndarray = field(init=False)
    L: np.ndarray | None = field(init=False)
    Linv: np.ndarray | None = field(init=False)
    AL: np.ndarray = field(init=False)

    def __post_init__(self):
        offsets = np.asarray(self.offsets)
        n = self.A.shape[1]
        if offsets[0] != 0 or offsets[-1] != n:
            raise ValueError("unit dimensions must sum to the number of columns")
        if len(self.b) != self.A.shape[0]:
            raise ValueError("A and b have incompatible shapes")
        if self.hyper.n_units != len(offsets) - 1:
            raise ValueError("hypermodel and unit partition disagree")
        object.__setattr__(self, "unit_of", np.repeat(np.arange(len(offsets) - 1),
                                                      np.diff(offsets)))
        if self.chol is None:
            L = Linv = None
            AL = self.A
        else:
            L = block_diag(*self.chol)
            Linv = block_diag(*[solve_triangular(c, np.eye(len(c)), lower=True)
                                for c in self.chol])
            AL = self.A @ L
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Linv", Linv)
        object.__setattr__(self, "AL", AL)

    @property
    def n_units(self):
        return len(self.offsets) - 1

    def unit_energy(self, z):
        """``c_u = z_u^T G_u^{-1} z_u`` for every unit."""
        u = z if self.Linv is None else self.Linv @ z
        return np.bincount(self.unit_of, weights=u * u, minlength=self.n_units)


def scalar_problem(A, b, hyper):
    return IasProblem(A, b, np.arange(A.shape[1] + 1), hyper)


def group_problem(A, b, offsets, chol, hyper):
    return IasProblem(A, b, np.asarray(offsets), hyper, list(chol))


@dataclass
class IasResult:
    z: np.ndarray
    theta: np.ndarray
    iterations: dict
    trace: list            # (regime r, iteration, objective, max theta, theta change)
    converged: bool

    def objectives(self, r=None):
        return np.array([t[2] for t in self.trace if r is None or t[0] == r])


def objective(problem, z, theta, hyper=None):
    hyper = hyper or problem.hyper
    resid = problem.A @ z - problem.b
    c = problem.unit_energy(z)
    val = (0.5 * resid @ resid + np.sum(c / (2 * theta))
           + np.sum((theta / hyper.vartheta) ** hyper.r)
           + np.sum(hyper.kappa * np.log(theta)))
    return float(val)


def update_z(problem, theta):
    """Minimize ``1/2||Az - b||^2 + 1/2 z^T S^{-1} z`` with ``S = blockdiag(theta_u G_u)``.

    Substituting ``z = S^{1/2} w`` turns this into a standard Tikhonov problem
    ``min ||B w - b||^2 + ||w||^2`` with ``B = A S^{1/2}``, solved through the
    smaller of its two Gram matrices.
    """
    theta = np.asarray(theta, dtype=float)
    s = np.sqrt(theta[problem.unit_of])
    B = problem.AL * s
    M, R = B.shape
    try:
        if R <= M:
            K = B.T @ B
            K[np.diag_indices(R)] += 1.0
            w = cho_solve(cho_factor(K, lower=True), B.T @ problem.b)
        else:
            K = B @ B.T
            K[np.diag_indices(M)] += 1.0
            w = B.T @ cho_solve(cho_factor(K, lower=True), problem.b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"z-update factorization failed: {exc}") from exc
    return s * w if problem.L is None else s * (problem.L @ w)


def _theta_r1(c, vartheta, kappa):
    eta = -kappa
    return 0.5 * vartheta * (eta + np.sqrt(eta * eta + 2 * c / vartheta))


def _theta_rhalf(c, vartheta, kappa, t_min):
    """Minimize ``c/(2 theta) + sqrt(theta/vartheta) + kappa log theta``.

    In ``t = log theta`` the objective is strictly convex, so its derivative
    ``g`` is increasing; a bracketed Newton iteration finds the root.
    """
    sv = 1.0 / np.sqrt(vartheta)

    def g(t):
        return -0.5 * c * np.exp(-t) + 0.5 * sv * np.exp(0.5 * t) + kappa

    def dg(t):
        return 0.5 * c * np.exp(-t) + 0.25 * sv * np.exp(0.5 * t)

    lo = t_min.copy()
    out = np.exp(lo)
    active = g(lo) < 0
    if not active.any():
        return out
    c, sv, kappa, lo = c[active], sv[active], kappa[active], lo[active]
    hi = np.maximum(np.log(vartheta[active]), lo + 1.0)
    for _ in range(200):
        up = g(hi) <= 0
        if not up.any():
            break
        lo = np.where(up, hi, lo)
        hi = np.where(up, hi + 2.0, hi)
    # start from the r = 1 solution clipped into the bracket
    vt = vartheta[active]
    eta = np.maximum(-kappa, 0.0)
    start = 0.5 * vt * (eta + np.sqrt(eta * eta + 2 * c / vt))
    t = np.clip(np.log(np.maximum(start, np.exp(lo))), lo, hi)
    for _ in range(200):
        gt = g(t)
        lo = np.where(gt < 0, t, lo)
        hi = np.where(gt > 0, t, hi)
        step = gt / dg(t)
        t_new = t - step
        outside = (t_new < lo) | (t_new > hi)
        t_new = np.where(outside, 0.5 * (lo + hi), t_new)
        done = np.abs(t_new - t) <= NEWTON_RTOL * np.maximum(1.0, np.abs(t))
        t = t_new
        if done.all():
            break
    out[active] = np.exp(t)
    return out


def update_theta(c, hyper, theta_floor=THETA_FLOOR):
    """Componentwise minimizer of ``c_u/(2 theta_u) + Phi(theta)``, floored."""
    c = np.asarray(c, dtype=float)
    vt = np.broadcast_to(hyper.vartheta, c.shape)
    kappa = np.broadcast_to(hyper.kappa, c.shape)
    t_min = theta_floor * vt
    if hyper.r == 1:
        theta = _theta_r1(c, vt, kappa)
    elif hyper.r == 0.5:
        theta = _theta_rhalf(c, vt.astype(float), kappa.astype(float), np.log(t_min))
    else:
        raise ValueError(f"unsupported exponent r={hyper.r}")
    return np.maximum(theta, t_min)


def solve(problem, schedule=None, theta0=None):
    """Run IAS from ``theta0`` (default ``vartheta``); hybrid r=1 then r=1/2."""
    schedule = schedule or Schedule()
    hyper1 = problem.hyper.for_regime(1.0)
    regimes = [(hyper1, schedule.max_iter_r1)]
    if schedule.hybrid:
        regimes.append((problem.hyper.for_regime(0.5), schedule.max_iter_rhalf))

    theta = np.array(hyper1.vartheta if theta0 is None else theta0, dtype=float)
    z = np.zeros(problem.A.shape[1])
    trace, iterations = [], {}
    converged = False
    for hyper, max_iter in regimes:
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            z = update_z(problem, theta)
            new = update_theta(problem.unit_energy(z), hyper)
            change = float(np.max(np.abs(new - theta) / theta))
            theta = new
            obj = objective(problem, z, theta, hyper)
            if not np.isfinite(obj):
                raise NumericalError(f"non-finite objective at iteration {it} (r={hyper.r})")
            trace.append((hyper.r, it, obj, float(theta.max()), change))
            if change < schedule.tol:
                converged = True
                break
        iterations[hyper.r] = it
    return IasResult(z, theta, iterations, trace, converged)


def write_trace_csv(result, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "regime", "objective", "max_theta", "theta_change"])
        for r, it, obj, tmax, change in result.trace:
            writer.writerow([it, r, repr(obj), repr(tmax), repr(change)])
