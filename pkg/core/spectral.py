"""
Symmetric-matrix spectral primitives for ICV Shrink.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import NotSymmetric

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


@dataclass
class EigenSystem:
    """Non-increasing eigenvalues and the matching orthonormal eigenvectors (columns)."""
    values: np.ndarray
    vectors: np.ndarray

    @property
    def p(self) -> int:
        return self.values.size

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


@dataclass
class ESD:
    """Empirical spectral distribution F(x) = #{lambda_i <= x} / p."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.sort(np.asarray(self.values, dtype=float))

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size


class SpectralTools:
    """Eigendecomposition with a deterministic orientation and related helpers."""

    @staticmethod
    def check_symmetric(M: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise NotSymmetric(f"matrix of shape {M.shape} is not square")
        scale = max(1.0, float(np.abs(M).max())) if M.size else 1.0
        if M.size and np.abs(M - M.T).max() > tol * scale:
            raise NotSymmetric(f"asymmetry {np.abs(M - M.T).max():.3g} exceeds tolerance")
        return M

    @staticmethod
    def sym_eig(M: np.ndarray) -> EigenSystem:
        """
        Full eigendecomposition of a symmetric matrix.

        Eigenvalues come out non-increasing. Each eigenvector is oriented so
        its largest-magnitude entry is positive; inside a cluster of equal
        eigenvalues the vectors are ordered lexicographically descending.

        Raises:
            NotSymmetric: M differs from M' by more than 1e-10 (relative)
        """
        M = SpectralTools.check_symmetric(M)
        values, vectors = np.linalg.eigh(0.5 * (M + M.T))
        values, vectors = values[::-1], vectors[:, ::-1]

        lead = np.argmax(np.abs(vectors), axis=0)
        signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
        signs[signs == 0] = 1.0
        vectors = vectors * signs

        order = np.arange(values.size)
        tol = SYMMETRY_TOL * max(1.0, float(np.abs(values).max())) if values.size else 0.0
        start = 0
        while start < values.size:
            stop = start + 1
            while stop < values.size and values[start] - values[stop] <= tol:
                stop += 1
            if stop - start > 1:
                block = vectors[:, start:stop]
                keys = [-block[k] for k in reversed(range(block.shape[0]))]
                order[start:stop] = start + np.lexsort(keys)
            start = stop
        return EigenSystem(values[order].copy(), vectors[:, order].copy())

    @staticmethod
    def psd_project(M: np.ndarray) -> np.ndarray:
        """
        Shift-and-rescale projection (M + l I) / (1 + l), l the negative part
        of the smallest eigenvalue. PSD input is returned unchanged.
        """
        M = SpectralTools.check_symmetric(M)
        lam_min = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        neg = max(0.0, -lam_min)
        if neg <= 1e-12 * max(1.0, float(np.abs(M).max())):
            return M.copy()
        logger.debug("psd projection shifted spectrum by %.3g", neg)
        return (M + neg * np.eye(M.shape[0])) / (1.0 + neg)

    @staticmethod
    def esd(values) -> ESD:
        return ESD(values)

    @staticmethod
    def eigenvalue_dispersion(E) -> float:
        """Sample variance (n - 1 convention) of the eigenvalues."""
        values = E.values if isinstance(E, EigenSystem) else np.asarray(E, dtype=float)
        if values.size < 2:
            return 0.0
        return float(np.var(values, ddof=1))
