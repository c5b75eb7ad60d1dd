"""
Random-matrix limits for ICV Shrink.

Numerical evaluation of the limiting spectral distribution F of a
sample-type covariance matrix with population spectrum H and ratio
y = p / n, its Stieltjes transform on and off the real axis, the
shrinkage function delta(v) = v / |1 - y - y v m(v)|^2, the limit of
the weighted spectral function Psi and the limiting portfolio loss of
a shrinkage function g.

H is a finite mixture of point masses. The Stieltjes transform m of F
solves m = sum_k w_k / (t_k (1 - y - y z m) - z).
"""

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, trapezoid
from scipy.optimize import brentq

from .exceptions import (EdgeQuadratureWarning, InvalidParams, NearEdge,
                         StieltjesNoConverge, UnitRatioExcluded)
from .spectral import EigenSystem

logger = logging.getLogger(__name__)

STIELTJES_TOL = 1e-10
MAX_ITER = 10_000
EPS_LADDER = (1e-2, 1e-3, 1e-4)
EDGE_MARGIN = 1e-3
QUAD_RTOL = 1e-4


@dataclass(frozen=True)
class PopulationSpectrum:
    """Population spectral distribution H as point masses (atoms, weights)."""
    atoms: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.atoms) != len(self.weights) or not self.atoms:
            raise InvalidParams("spectrum needs matching, non-empty atoms and weights")
        if min(self.atoms) < 0 or min(self.weights) < 0:
            raise InvalidParams("atoms and weights must be non-negative")
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-9:
            raise InvalidParams(f"weights sum to {total}, expected 1")

    @classmethod
    def point_mass(cls, c: float = 1.0) -> "PopulationSpectrum":
        return cls((float(c),), (1.0,))

    @classmethod
    def from_atoms(cls, values: Sequence[float], weights: Optional[Sequence[float]] = None,
                   rtol: float = 1e-8) -> "PopulationSpectrum":
        """
        Spectrum from eigenvalues (equal weights by default). Values closer
        than rtol (relative to the largest) are merged into one atom.
        """
        values = np.asarray(values, dtype=float)
        w = np.full(values.size, 1.0 / values.size) if weights is None else np.asarray(weights, dtype=float)
        w = w / w.sum()
        order = np.argsort(values, kind="stable")
        values, w = values[order], w[order]
        breaks = np.flatnonzero(np.diff(values) > rtol * max(1.0, np.abs(values).max())) + 1
        atoms, masses = [], []
        for group in np.split(np.arange(values.size), breaks):
            mass = w[group].sum()
            atoms.append(float(np.dot(values[group], w[group]) / mass))
            masses.append(float(mass))
        total = sum(masses)
        return cls(tuple(atoms), tuple(m / total for m in masses))

    @classmethod
    def quantize_density(cls, pdf: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                         n_atoms: int = 200, resolution: int = 20_000) -> "PopulationSpectrum":
        """Equal-weight atoms at the mid-quantiles of a density on [lo, hi]."""
        grid = np.linspace(lo, hi, resolution)
        cdf = cumulative_trapezoid(np.clip(pdf(grid), 0, None), grid, initial=0.0)
        cdf /= cdf[-1]
        levels = (np.arange(n_atoms) + 0.5) / n_atoms
        return cls.from_atoms(np.interp(levels, cdf, grid))

    @property
    def mean(self) -> float:
        return float(np.dot(self.atoms, self.weights))

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.atoms), np.asarray(self.weights)


SpectrumLike = Union[PopulationSpectrum, Sequence[float], np.ndarray]


def as_spectrum(H: SpectrumLike) -> PopulationSpectrum:
    return H if isinstance(H, PopulationSpectrum) else PopulationSpectrum.from_atoms(H)


@dataclass
class PsiFunction:
    """Tabulated F, Psi and delta on a grid covering the support of F."""
    x: np.ndarray
    F: np.ndarray
    psi: np.ndarray
    delta: np.ndarray
    density: np.ndarray
    zero_mass: float = 0.0   # mass of F at 0 (y > 1)
    zero_psi: float = 0.0    # jump of Psi at 0 (y > 1)

    def _eval(self, table: np.ndarray, jump: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.x, table, left=jump, right=table[-1])
        return np.where(x < 0, 0.0, out)

    def __call__(self, x):
        return self._eval(self.psi, self.zero_psi, x)

    def cdf(self, x):
        return self._eval(self.F, self.zero_mass, x)

    @property
    def total(self) -> float:
        return float(self.psi[-1])


@dataclass(eq=False)
class SpectralLimit:
    """Limiting spectral distribution for a population spectrum and ratio y."""
    H: PopulationSpectrum
    y: float
    _support: Optional[List[Tuple[float, float]]] = field(default=None, repr=False)
    _psi: Dict[int, PsiFunction] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.y <= 0:
            raise InvalidParams("concentration ratio must be positive")
        self.t, self.w = self.H.arrays()

    # ---- Stieltjes transform -------------------------------------------------

    def residual(self, z: complex, m: complex) -> complex:
        return m - np.sum(self.w / (self.t * (1.0 - self.y - self.y * z * m) - z))

    def _solve(self, z: complex, m: complex, budget: List[int]) -> complex:
        """Newton with damped fixed-point fallback at one z, starting from m."""
        t, w, y = self.t, self.w, self.y
        real_axis = z.imag == 0
        while budget[0] > 0:
            budget[0] -= 1
            d = t * (1.0 - y - y * z * m) - z
            f = np.sum(w / d)
            r = m - f
            if abs(r) <= STIELTJES_TOL * max(1.0, abs(m)):
                return m
            slope = 1.0 - np.sum(w * t * y * z / (d * d))
            if slope != 0:
                cand = m - r / slope
                if (cand.imag > 0 or (real_axis and cand.imag > -1e-12)) and \
                        abs(self.residual(z, cand)) < abs(r):
                    m = cand
                    continue
            step = 0.5
            cand = (1 - step) * m + step * f
            while cand.imag <= 0 and not real_axis and step > 1e-6:
                step *= 0.5
                cand = (1 - step) * m + step * f
            m = cand
        raise StieltjesNoConverge(z, abs(self.residual(z, m)))

    def stieltjes(self, z: complex) -> complex:
        """m_F(z) for Im z > 0, reached by descending in Im z from Im z = 1."""
        z = complex(z)
        if z.imag <= 0:
            raise InvalidParams("Stieltjes transform is evaluated on the upper half-plane")
        budget = [MAX_ITER]
        start = complex(z.real, max(1.0, z.imag))
        m = self._solve(start, np.sum(self.w / (self.t - start)), budget)
        eta = start.imag
        while eta > z.imag:
            eta = max(eta * 0.1, z.imag)
            m = self._solve(complex(z.real, eta), m, budget)
        return m

    def boundary_value(self, x: float) -> Tuple[complex, float]:
        """
        Boundary value of m_F at real x without edge checks.

        Returns:
            (value, extrapolation discrepancy)
        """
        budget = [MAX_ITER]
        start = complex(x, 1.0)
        m = self._solve(start, np.sum(self.w / (self.t - start)), budget)
        ladder = {}
        for eps in (1e-1,) + EPS_LADDER:
            m = self._solve(complex(x, eps), m, budget)
            ladder[eps] = m
        # eliminate the O(eps) term from consecutive rungs
        coarse = (10.0 * ladder[1e-3] - ladder[1e-2]) / 9.0
        fine = (10.0 * ladder[1e-4] - ladder[1e-3]) / 9.0
        value = fine
        try:
            polish_budget = [60]
            polished = self._solve(complex(x, 0.0), complex(fine.real, max(fine.imag, 0.0)), polish_budget)
            if abs(polished - fine) <= 1e-2 * max(1.0, abs(fine)) and polished.imag > -1e-12:
                value = polished
        except StieltjesNoConverge:
            pass
        if not self.in_support(x):
            value = complex(value.real, 0.0)
        else:
            value = complex(value.real, max(value.imag, 0.0))
        return value, float(abs(fine - coarse))

    # ---- support ---------------------------------------------------------------

    def _x_of_b(self, b: float) -> float:
        return -1.0 / b + self.y * float(np.sum(self.w * self.t / (1.0 + self.t * b)))

    def _dx_of_b(self, b):
        b = np.asarray(b, dtype=float)
        tb = 1.0 + np.multiply.outer(b, self.t)
        return 1.0 / b ** 2 - self.y * np.sum(self.w * self.t ** 2 / tb ** 2, axis=-1)

    def support(self) -> List[Tuple[float, float]]:
        """Support intervals of the continuous part of F, from the critical points of x(b)."""
        if self._support is not None:
            return self._support
        positive = self.t[self.t > 0]
        poles = sorted(set((-1.0 / positive).tolist()) | {0.0})
        scale = 1.0 / float(np.mean(positive))
        intervals = [(-np.inf, poles[0])] + list(zip(poles[:-1], poles[1:])) + [(0.0, np.inf)]

        gaps = []
        K = 1024
        for L, R in intervals:
            if np.isinf(L):
                span = abs(R) if R != 0 else scale
                b = R - span * np.logspace(9, -9, K)
            elif np.isinf(R):
                b = scale * np.logspace(-9, 9, K)
            else:
                u = np.linspace(0.0, 1.0, K + 2)[1:-1]
                b = L + (R - L) * 0.5 * (1.0 - np.cos(np.pi * u))
            sign = self._dx_of_b(b) > 0
            if not sign.any():
                continue
            edges = np.flatnonzero(np.diff(sign.astype(int)))
            starts = [0] if sign[0] else []
            starts += [k + 1 for k in edges if not sign[k]]
            ends = [k for k in edges if sign[k]]
            if sign[-1]:
                ends.append(K - 1)
            for s, e in zip(starts, ends):
                if s == 0:
                    lo_x = 0.0 if np.isinf(L) else (-np.inf if L == 0.0 else self._x_of_b(b[0]))
                else:
                    lo_x = self._x_of_b(brentq(self._dx_of_b, b[s - 1], b[s], xtol=1e-15, rtol=1e-14))
                if e == K - 1:
                    hi_x = 0.0 if np.isinf(R) else (np.inf if R == 0.0 else self._x_of_b(b[-1]))
                else:
                    hi_x = self._x_of_b(brentq(self._dx_of_b, b[e], b[e + 1], xtol=1e-15, rtol=1e-14))
                gaps.append((lo_x, hi_x))

        gaps.sort()
        support, cursor = [], -np.inf
        for lo, hi in gaps:
            if lo > cursor:
                support.append((cursor, lo))
            cursor = max(cursor, hi)
        if cursor < np.inf:
            support.append((cursor, np.inf))
        self._support = [(max(lo, 0.0), hi) for lo, hi in support
                         if np.isfinite(lo) and np.isfinite(hi) and hi > 0
                         and hi - lo > 1e-12 * (1.0 + abs(hi))]
        logger.debug("support of F for y=%.4g: %s", self.y, self._support)
        return self._support

    def in_support(self, x: float) -> bool:
        return any(lo < x < hi for lo, hi in self.support())

    def nearest_edge(self, x: float) -> float:
        edges = np.array([e for interval in self.support() for e in interval])
        return float(edges[np.argmin(np.abs(edges - x))])

    def edge_margin(self) -> float:
        support = self.support()
        return EDGE_MARGIN * (support[-1][1] - support[0][0])

    @property
    def zero_mass(self) -> float:
        return max(0.0, 1.0 - 1.0 / self.y)

    # ---- derived functions -------------------------------------------------------

    def shrinkage(self, x: float, m: complex) -> float:
        return float(x / abs(1.0 - self.y - self.y * x * m) ** 2)

    def density(self, x: float) -> float:
        if not self.in_support(x):
            return 0.0
        return float(self.boundary_value(x)[0].imag / np.pi)

    def psi_function(self, n_theta: int = 401) -> PsiFunction:
        """Tabulate F and Psi = integral of delta dF with a cosine substitution per support interval."""
        if n_theta in self._psi:
            return self._psi[n_theta]
        theta = np.linspace(0.0, np.pi, n_theta)
        xs, Fs, psis, deltas, dens = [], [], [], [], []
        F0, psi0 = self.zero_mass, 0.0
        pieces = []
        for lo, hi in self.support():
            x = lo + (hi - lo) * 0.5 * (1.0 - np.cos(theta))
            jac = (hi - lo) * 0.5 * np.sin(theta)
            rho = np.zeros(n_theta)
            delta = np.zeros(n_theta)
            for k in range(1, n_theta - 1):
                m, _ = self.boundary_value(float(x[k]))
                rho[k] = max(m.imag, 0.0) / np.pi
                delta[k] = self.shrinkage(float(x[k]), m)
            delta[0], delta[-1] = delta[1], delta[-2]
            pieces.append((x, jac, rho, delta))

        cont_psi = sum(float(trapezoid(rho * delta * jac, theta)) for _, jac, rho, delta in pieces)
        if self.zero_mass > 0:
            # the null directions carry the rest of the total mean of H
            psi0 = max(0.0, self.H.mean - cont_psi)
        zero_psi = psi0
        for x, jac, rho, delta in pieces:
            F = F0 + cumulative_trapezoid(rho * jac, theta, initial=0.0)
            psi = psi0 + cumulative_trapezoid(rho * delta * jac, theta, initial=0.0)
            F0, psi0 = F[-1], psi[-1]
            xs.append(x)
            Fs.append(F)
            psis.append(psi)
            deltas.append(delta)
            dens.append(rho)
        table = PsiFunction(np.concatenate(xs), np.concatenate(Fs), np.concatenate(psis),
                            np.concatenate(deltas), np.concatenate(dens), self.zero_mass, zero_psi)
        self._psi[n_theta] = table
        return table


@lru_cache(maxsize=64)
def spectral_limit(H: PopulationSpectrum, y: float) -> SpectralLimit:
    return SpectralLimit(H, float(y))


class RandomMatrixLimits:
    """Limiting spectral objects and the shrinkage functional."""

    @staticmethod
    def solve_stieltjes(H: SpectrumLike, y: float, z: complex) -> complex:
        """
        Stieltjes transform of the limiting spectral distribution at Im z > 0.

        Raises:
            StieltjesNoConverge: residual above 1e-10 after 10^4 iterations
        """
        return spectral_limit(as_spectrum(H), float(y)).stieltjes(z)

    @staticmethod
    def boundary_stieltjes(H: SpectrumLike, y: float, x: float) -> complex:
        """
        Limit of m_F(x + i eps) as eps -> 0, from the eps ladder 1e-2, 1e-3,
        1e-4 with Richardson extrapolation and a Newton polish on the axis.

        Raises:
            UnitRatioExcluded: y == 1
            NearEdge: x within the edge margin of a support edge
        """
        if abs(y - 1.0) < 1e-12:
            raise UnitRatioExcluded("boundary evaluation is not defined at y = 1")
        limit = spectral_limit(as_spectrum(H), float(y))
        edge = limit.nearest_edge(x)
        if abs(x - edge) < limit.edge_margin():
            raise NearEdge(x, edge)
        value, discrepancy = limit.boundary_value(x)
        logger.debug("boundary m(%.6g) = %s (extrapolation spread %.2g)", x, value, discrepancy)
        return value

    @staticmethod
    def delta_function(H: SpectrumLike, y: float, v: float) -> float:
        """delta(v) = v / |1 - y - y v m(v)|^2."""
        if v <= 0:
            raise InvalidParams("delta is evaluated at v > 0")
        m = RandomMatrixLimits.boundary_stieltjes(H, y, v)
        return float(v / abs(1.0 - y - y * v * m) ** 2)

    @staticmethod
    def optimal_g(H: SpectrumLike, y: float, x: float) -> float:
        """The loss-minimizing shrinkage function; the same formula as delta."""
        return RandomMatrixLimits.delta_function(H, y, x)

    @staticmethod
    def optimal_shrinkage_function(H: SpectrumLike, y: float) -> Callable[[float], float]:
        """optimal_g as a callable without the edge guard, for quadrature."""
        limit = spectral_limit(as_spectrum(H), float(y))
        return lambda x: limit.shrinkage(x, limit.boundary_value(x)[0])

    @staticmethod
    def support(H: SpectrumLike, y: float) -> List[Tuple[float, float]]:
        return spectral_limit(as_spectrum(H), float(y)).support()

    @staticmethod
    def psi_empirical(S_eigen: EigenSystem, Sigma_true: np.ndarray, x) -> np.ndarray:
        """Psi_p(x) = (1/p) sum_i u_i' Sigma u_i 1{v_i <= x}, vectorized over x."""
        U = S_eigen.vectors
        weights = np.einsum("ji,jk,ki->i", U, Sigma_true, U)
        order = np.argsort(S_eigen.values, kind="stable")
        values = S_eigen.values[order]
        cum = np.concatenate([[0.0], np.cumsum(weights[order])]) / values.size
        return cum[np.searchsorted(values, np.asarray(x, dtype=float), side="right")]

    @staticmethod
    def psi_function(H: SpectrumLike, y: float, n_theta: int = 401) -> PsiFunction:
        if abs(y - 1.0) < 1e-12:
            raise UnitRatioExcluded("Psi requires y != 1")
        return spectral_limit(as_spectrum(H), float(y)).psi_function(n_theta)

    @staticmethod
    def limit_loss(H: SpectrumLike, y: float, g: Callable[[float], float],
                   form: str = "portfolio") -> float:
        """
        Limiting out-of-sample loss of the rotation-equivariant estimator
        with shrinkage function g.

        form="portfolio" evaluates int delta / g^2 dF / (int dF / g)^2, the
        limit of the minimum-variance loss, invariant to rescaling g.
        form="displayed" evaluates int delta / g dF / (int dF / g)^2, which
        is homogeneous of degree one in g.
        """
        if abs(y - 1.0) < 1e-12:
            raise UnitRatioExcluded("limit loss requires y != 1")
        if y > 1:
            raise InvalidParams("limit loss is evaluated for y < 1")
        if form not in ("portfolio", "displayed"):
            raise InvalidParams(f"unknown loss form {form!r}")
        limit = spectral_limit(as_spectrum(H), float(y))
        power = 2 if form == "portfolio" else 1

        def integrate(fn) -> float:
            total = 0.0
            for lo, hi in limit.support():
                def integrand(theta):
                    x = lo + (hi - lo) * 0.5 * (1.0 - np.cos(theta))
                    if x <= lo or x >= hi:
                        return 0.0
                    m, _ = limit.boundary_value(x)
                    rho = max(m.imag, 0.0) / np.pi
                    return fn(x, m) * rho * (hi - lo) * 0.5 * np.sin(theta)
                value, err = quad(integrand, 0.0, np.pi, epsrel=QUAD_RTOL, limit=200)
                if err > QUAD_RTOL * max(abs(value), 1e-300):
                    warnings.warn(f"quadrature error {err:.2g} on [{lo:.4g}, {hi:.4g}]",
                                  EdgeQuadratureWarning)
                total += value
            return total

        denominator = integrate(lambda x, m: 1.0 / g(x))
        numerator = integrate(lambda x, m: limit.shrinkage(x, m) / g(x) ** power)
        return numerator / denominator ** 2

    @staticmethod
    def tables(H: SpectrumLike, y: float, n_theta: int = 401) -> np.ndarray:
        """Rows (x, F, Psi, delta, g) over the support grid."""
        table = RandomMatrixLimits.psi_function(H, y, n_theta)
        return np.column_stack([table.x, table.F, table.psi, table.delta, table.delta])
