"""Truncated-SVD compression of subdictionaries and the compression-error model."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, NumericalError

EIG_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class CompressedDictionary:
    """Per-region factors ``D^(l) ~ W^(l) H^(l)``.

    ``singular_values[l]`` keeps the full spectrum of ``D^(l)`` so that the
    truncation rule and the Eckart-Young residual can be checked afterwards.
    """

    features: list          # W^(l), (m, r_l) orthonormal columns
    coefficients: list      # H^(l), (r_l, n_l)
    singular_values: list
    tau: float
    W: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "W", np.hstack(self.features))
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(self.ranks)]))

    @property
    def ranks(self):
        return np.array([w.shape[1] for w in self.features])

    @property
    def n_groups(self):
        return len(self.features)

    def group_slice(self, l):
        return slice(int(self.offsets[l]), int(self.offsets[l + 1]))

    def truncation_error(self, l):
        """Spectral norm of the discarded part, sigma_{r+1} (0 if nothing discarded)."""
        s = self.singular_values[l]
        r = self.features[l].shape[1]
        return float(s[r]) if r < len(s) else 0.0


def truncation_rank(s, tau):
    return max(1, int(np.count_nonzero(s >= tau * s[0])))


def compress(dictionary, tau):
    """Keep singular triplets with ``sigma_j >= tau * sigma_1`` in every group."""
    if not 0 < tau < 1:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    features, coeffs, spectra = [], [], []
    for l in range(dictionary.n_groups):
        block = dictionary.atoms[:, dictionary.group_slice(l)]
        try:
            U, s, Vt = np.linalg.svd(block, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed for group {l}: {exc}") from exc
        r = truncation_rank(s, tau)
        features.append(U[:, :r])
        coeffs.append(s[:r, None] * Vt[:r])
        spectra.append(s)
    return CompressedDictionary(features, coeffs, spectra, float(tau))


@dataclass(frozen=True, eq=False)
class DceModel:
    """Gaussian model of the compression error plus white measurement noise.

    The error covariance is diagonalized once; changing ``delta`` only shifts
    the eigenvalues, so :meth:`with_delta` is cheap.
    """

    mean: np.ndarray
    cov: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    delta: float = 0.0
    scale: float = 0.0      # mean atom energy per channel, the reference for singularity
    inv_sqrt: np.ndarray = field(init=False)

    def __post_init__(self):
        lam = self.eigvals + self.delta ** 2
        top = max(lam.max(), self.scale)
        if self.delta == 0 and (top <= 0 or lam.min() <= EIG_FLOOR * top):
            raise NumericalError("compression-error covariance is singular; use delta > 0")
        lam = np.maximum(lam, EIG_FLOOR * top)
        V = self.eigvecs
        object.__setattr__(self, "inv_sqrt", (V / np.sqrt(lam)) @ V.T)

    @property
    def C(self):
        return self.cov + self.delta ** 2 * np.eye(len(self.mean))

    def with_delta(self, delta):
        if delta < 0:
            raise ValueError("delta must be nonnegative")
        return replace(self, delta=float(delta))

    def whiten(self, v):
        return self.inv_sqrt @ v


def compression_residuals(dictionary, comp):
    """Residuals ``e_k = d_k - W z_k`` with minimum-norm least-squares ``z_k``."""
    Z, *_ = np.linalg.lstsq(comp.W, dictionary.atoms, rcond=None)
    return dictionary.atoms - comp.W @ Z


def estimate_dce(dictionary, comp, delta):
    """Sample mean and covariance (1/(N-1)) of the compression residuals."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if dictionary.n_atoms < 2:
        raise ConfigurationError("need at least two atoms to estimate a covariance")
    E = compression_residuals(dictionary, comp)
    mean = E.mean(axis=1)
    cov = np.cov(E, ddof=1)
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    scale = float(np.mean(np.sum(dictionary.atoms ** 2, axis=0))) / dictionary.n_channels
    return DceModel(mean, cov, np.clip(w, 0.0, None), V, float(delta), scale)


def whiten(model, v):
    return model.whiten(v)
