"""Structural covariances of the group prior and generalized-gamma hyperparameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigurationError

log = logging.getLogger(__name__)

RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GroupCovariance:
    G: np.ndarray
    chol: np.ndarray          # lower Cholesky factor, G = chol @ chol.T
    Q: np.ndarray             # left singular vectors of H
    lam: np.ndarray           # singular values of H
    effective_rank: int
    fallback: bool = False

    def mahalanobis_sq(self, z):
        """``z^T G^{-1} z``."""
        z = np.asarray(z, dtype=float)
        return float(z @ cho_solve((self.chol, True), z))


@dataclass(frozen=True, eq=False)
class StructuralCovariance:
    groups: list
    eps: float

    def __getitem__(self, l):
        return self.groups[l]

    def __len__(self):
        return len(self.groups)

    def mahalanobis_sq(self, l, z):
        return self.groups[l].mahalanobis_sq(z)


def group_covariance(H, eps):
    """``G = sum_j (lam_j / lam_1)^2 q_j q_j^T + eps I`` from the SVD of ``H``."""
    r = H.shape[0]
    Q, lam, _ = np.linalg.svd(H, full_matrices=True)
    lam = np.concatenate([lam, np.zeros(r - len(lam))])
    if lam[0] == 0:
        G = np.eye(r)
        return GroupCovariance(G, np.eye(r), Q, lam, 0, fallback=True)
    p = int(np.count_nonzero(lam > RANK_TOL * lam[0]))
    w = (lam[:p] / lam[0]) ** 2
    G = (Q[:, :p] * w) @ Q[:, :p].T + eps * np.eye(r)
    G = 0.5 * (G + G.T)
    chol, _ = cho_factor(G, lower=True)
    return GroupCovariance(G, np.tril(chol), Q, lam, p)


def build_structural_covariances(comp, eps=1e-3):
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    groups = []
    for l, H in enumerate(comp.coefficients):
        g = group_covariance(H, eps)
        if g.fallback:
            log.warning("group %d has zero coefficient block; using G = I", l)
        groups.append(g)
    return StructuralCovariance(groups, float(eps))


def mahalanobis_sq(structural, l, z):
    return structural.mahalanobis_sq(l, z)


@dataclass(frozen=True, eq=False)
class HyperModel:
    """Generalized-gamma hyperprior ``theta^(r beta - 1) exp(-(theta/vartheta)^r)``.

    ``kappa = dim/2 + 1 - r*beta`` is the coefficient of ``log theta`` in the
    negative log posterior.
    """

    r: float
    dims: np.ndarray
    beta: np.ndarray
    vartheta: np.ndarray
    eta: float

    @property
    def kappa(self):
        return self.dims / 2 + 1 - self.r * self.beta

    @property
    def n_units(self):
        return len(self.dims)

    def for_regime(self, r):
        """Same sensitivity and scale, exponent switched to ``r``."""
        return default_hypermodel(self.dims, r, self.eta, self.vartheta)


def default_hypermodel(dims, r=1.0, eta=1e-3, vartheta=1e-2):
    """Pick ``beta`` so that ``kappa = -eta`` for every unit.

    ``vartheta`` may be a scalar or one value per unit.
    """
    if eta <= 0:
        raise ConfigurationError("eta must be positive")
    dims = np.asarray(dims, dtype=float)
    vt = np.broadcast_to(np.asarray(vartheta, dtype=float), dims.shape).copy()
    if np.any(vt <= 0):
        raise ConfigurationError("vartheta must be positive")
    if r == 1:
        beta = dims / 2 + 1 + eta
    elif r == 0.5:
        beta = dims + 2 + 2 * eta
    else:
        raise ConfigurationError(f"unsupported hyperprior exponent r={r}")
    return HyperModel(float(r), dims, beta, vt, float(eta))
