"""Two-phase region classifier: compressed group coding, deflation, atom coding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ias
from .compression import compress, estimate_dce
from .dictionary import subset
from .prior import build_structural_covariances, default_hypermodel


@dataclass(frozen=True)
class ClassifierConfig:
    p: float = 0.005
    eta: float = 1e-3
    vartheta: float = 1e-2
    winner_rule: str = "max"      # "max" atom variance or "sum" per region
    schedule: ias.Schedule = field(default_factory=ias.Schedule)
    phase2_schedule: ias.Schedule = field(
        default_factory=lambda: ias.Schedule(hybrid=False))


@dataclass(frozen=True, eq=False)
class Artifacts:
    """Trial-independent model pieces, shared read-only by all trials."""

    dictionary: object
    compressed: object
    dce: object
    structural: object

    @property
    def n_regions(self):
        return self.dictionary.n_groups


def build_artifacts(dictionary, tau, eps=1e-3, delta=1e-3):
    comp = compress(dictionary, tau)
    dce = estimate_dce(dictionary, comp, delta)
    structural = build_structural_covariances(comp, eps)
    return Artifacts(dictionary, comp, dce, structural)


@dataclass
class ClassificationOutcome:
    phase1_theta: np.ndarray
    phase1_winner: int
    deflation_set: np.ndarray
    phase2_x: np.ndarray
    phase2_theta: np.ndarray
    phase2_winner: int
    atom_region: np.ndarray       # region owning each retained atom
    atom_dipole: np.ndarray       # source-space dipole behind each retained atom
    delta: float
    iterations: dict = field(default_factory=dict)

    def summary(self):
        return {
            "phase1_winner": int(self.phase1_winner),
            "deflation_set": [int(l) for l in self.deflation_set],
            "phase2_winner": int(self.phase2_winner),
            "phase1_theta_max": float(self.phase1_theta.max()),
            "phase2_theta_max": float(self.phase2_theta.max()),
            "n_retained_atoms": int(len(self.phase2_theta)),
            "delta": float(self.delta),
            "iterations": {k: int(v) for k, v in self.iterations.items()},
        }


def phase1(y, artifacts, config, delta):
    """Group-sparse coding of ``y`` in the compressed dictionary.

    Returns the per-region variances, the coefficients and the solver result.
    """
    comp = artifacts.compressed
    dce = artifacts.dce.with_delta(delta)
    A = dce.whiten(comp.W)
    b = dce.whiten(y - dce.mean)
    hyper = default_hypermodel(comp.ranks, 1.0, config.eta, config.vartheta)
    chol = [g.chol for g in artifacts.structural.groups]
    problem = ias.group_problem(A, b, comp.offsets, chol, hyper)
    result = ias.solve(problem, config.schedule)
    return result.theta, result.z, result


def deflation_set(theta, p):
    """Regions with ``theta_l > p * max(theta)``, in region order."""
    if not 0 < p < 1:
        raise ValueError(f"deflation threshold must lie in (0, 1), got {p}")
    theta = np.asarray(theta)
    return np.flatnonzero(theta > p * theta.max())


def deflate(dictionary, theta, p):
    """Deflated dictionary and, per column, the owning region and the column index."""
    keep = deflation_set(theta, p)
    return subset(dictionary, keep)


def pick_winner(theta, owner, rule="max"):
    """Region owning the largest variance (``"max"``) or the largest total (``"sum"``).

    Ties go to the lowest region index.
    """
    theta = np.asarray(theta)
    owner = np.asarray(owner)
    if rule == "max":
        return int(owner[theta == theta.max()].min())
    if rule == "sum":
        regions = np.unique(owner)
        totals = np.array([theta[owner == l].sum() for l in regions])
        return int(regions[np.argmax(totals)])
    raise ValueError(f"unknown winner rule {rule!r}")


def phase2(y, D_defl, owner, delta, config):
    """Scalar-sparse coding with the deflated dictionary (gamma hyperprior)."""
    if D_defl.shape[1] == 0:
        raise ValueError("deflated dictionary is empty")
    hyper = default_hypermodel(np.ones(D_defl.shape[1]), 1.0, config.eta, config.vartheta)
    problem = ias.scalar_problem(D_defl / delta, y / delta, hyper)
    result = ias.solve(problem, config.phase2_schedule)
    return result.z, result.theta, pick_winner(result.theta, owner, config.winner_rule), result


def classify(y, artifacts, config, delta):
    y = np.asarray(y, dtype=float)
    theta1, _, res1 = phase1(y, artifacts, config, delta)
    winner1 = int(np.argmax(theta1))
    keep = deflation_set(theta1, config.p)
    D_defl, owner, cols = subset(artifacts.dictionary, keep)
    x, theta2, winner2, res2 = phase2(y, D_defl, owner, delta, config)
    iterations = {f"phase1_r{k:g}": v for k, v in res1.iterations.items()}
    iterations.update({f"phase2_r{k:g}": v for k, v in res2.iterations.items()})
    return ClassificationOutcome(theta1, winner1, keep, x, theta2, winner2, owner,
                                 artifacts.dictionary.dipole_index[cols], float(delta),
                                 iterations)
