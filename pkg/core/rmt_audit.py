"""
Random-matrix audit for ICV Shrink.
Runs the limit-theory checks and reports each as PASS/WARNING/ERROR
with the measured deviation, like a report card.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy.stats import ks_2samp

from .estimators import CovarianceEstimators
from .rmt_limits import PopulationSpectrum, RandomMatrixLimits, SpectrumLike, as_spectrum
from .simulate import ClassCModel, GammaPath, PathSimulator
from .spectral import SpectralTools
from .sqml import ShrinkageQML, SqmlConfig
from .sync import ReturnsMatrix, SyncPanel, SyncScheme

logger = logging.getLogger(__name__)


class IssueSeverity(Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    PASS = "pass"


@dataclass
class AuditIssue:
    check_name: str
    severity: IssueSeverity
    message: str
    value: float = float("nan")
    threshold: float = float("nan")

    def line(self) -> str:
        verdict = "PASS" if self.severity is IssueSeverity.PASS else self.severity.value.upper()
        return f"{self.check_name} {verdict} ({self.message})"


def _compare(name: str, value: float, threshold: float, label: str, below: bool = True) -> AuditIssue:
    ok = value < threshold if below else value >= threshold
    relation = "<" if below else ">="
    if not ok:
        relation = ">=" if below else "<"
    severity = IssueSeverity.PASS if ok else IssueSeverity.ERROR
    return AuditIssue(name, severity, f"{label} {value:.2g} {relation} {threshold:g}", value, threshold)


def interior_points(H: SpectrumLike, y: float, count: int = 50, margin: float = 0.02) -> np.ndarray:
    """Points spread over the support of F, kept `margin` (relative) away from the edges."""
    points = []
    support = RandomMatrixLimits.support(H, y)
    widths = np.array([hi - lo for lo, hi in support])
    shares = np.maximum(1, np.round(count * widths / widths.sum())).astype(int)
    for (lo, hi), k in zip(support, shares):
        pad = margin * (hi - lo)
        points.append(np.linspace(lo + pad, hi - pad, k))
    return np.concatenate(points)[:count]


def two_level_model(p: int, seed: int, low: float = 1.0, high: float = 3.0, pieces: int = 10) -> ClassCModel:
    """Class-C model with half the population eigenvalues at `low`, half at `high`, random eigenvectors."""
    rng = np.random.default_rng(seed)
    spectrum = np.where(np.arange(p) < p // 2, low, high)
    lam = ClassCModel.lambda_from_spectrum(spectrum, rng)
    return ClassCModel(lam, GammaPath.alternating(1.0, pieces, (1.0, 2.0)), seed=seed)


class RmtAuditor:
    """Named checks of the limiting spectral objects against theory and simulation."""

    @staticmethod
    def identity_population(y: float = 0.5, count: int = 50, tol: float = 1e-3) -> AuditIssue:
        """With H = delta_1 the optimal shrinkage is identically 1."""
        H = PopulationSpectrum.point_mass(1.0)
        values = [RandomMatrixLimits.delta_function(H, y, x) for x in interior_points(H, y, count)]
        return _compare("delta≡1", float(np.max(np.abs(np.array(values) - 1.0))), tol, "max dev")

    @staticmethod
    def delta_matches_g(H: SpectrumLike, y: float, count: int = 50, tol: float = 1e-12) -> AuditIssue:
        dev = max(abs(RandomMatrixLimits.delta_function(H, y, x) - RandomMatrixLimits.optimal_g(H, y, x))
                  for x in interior_points(H, y, count))
        issue = _compare("delta≡g", dev, tol, "max dev")
        if dev == 0.0:
            issue.message = "max dev 0"
        return issue

    @staticmethod
    def psi_total(H: SpectrumLike, y: float, tol: float = 1e-3) -> AuditIssue:
        """Psi(+inf) equals the mean of H and Psi is non-decreasing."""
        table = RandomMatrixLimits.psi_function(H, y)
        dev = abs(table.total - as_spectrum(H).mean)
        if np.any(np.diff(table.psi) < -1e-12):
            return AuditIssue("Psi(inf)=mean(H)", IssueSeverity.ERROR, "Psi is decreasing somewhere", dev, tol)
        return _compare("Psi(inf)=mean(H)", dev, tol, "abs dev")

    @staticmethod
    def psi_convergence(p: int = 400, n: int = 800, reps: int = 5, seed: int = 0,
                        tol: float = 0.05) -> AuditIssue:
        """Sup distance on a 50-point grid between Psi_p of S_TVA and the limiting Psi."""
        distances = []
        for k, child in enumerate(PathSimulator.replication_seeds(seed, reps)):
            model = two_level_model(p, seed + k)
            sigma = PathSimulator.true_icv(model, (0.0, 1.0))
            rng = np.random.default_rng(child)
            S = CovarianceEstimators.tva_cov(PathSimulator.simulate_increments(model, n, 1.0, rng)).matrix
            eig = SpectralTools.sym_eig(S)
            H = PopulationSpectrum.from_atoms(np.linalg.eigvalsh(sigma))
            psi = RandomMatrixLimits.psi_function(H, p / n)
            grid = np.linspace(0.0, 1.05 * eig.values[0], 50)
            distances.append(float(np.max(np.abs(RandomMatrixLimits.psi_empirical(eig, sigma, grid) - psi(grid)))))
        return _compare("Psi_p→Psi", float(np.mean(distances)), tol, "mean sup dist")

    @staticmethod
    def tva_iid_lsd(p: int = 400, n: int = 800, seed: int = 0, tol: float = 0.05) -> AuditIssue:
        """KS distance between the spectra of S_TVA and of an IID sample covariance with the same ICV."""
        model = two_level_model(p, seed)
        sigma = PathSimulator.true_icv(model, (0.0, 1.0))
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        tva = CovarianceEstimators.tva_cov(PathSimulator.simulate_increments(model, n, 1.0, rng)).matrix
        vals, vecs = np.linalg.eigh(sigma)
        root = vecs * np.sqrt(np.clip(vals, 0, None))
        X = root @ rng.standard_normal((p, n))
        iid = X @ X.T / n
        stat = ks_2samp(np.linalg.eigvalsh(tva), np.linalg.eigvalsh(iid)).statistic
        return _compare("TVA/IID LSD", float(stat), tol, "KS")

    @staticmethod
    def eigenvalue_spreading(p: int = 100, n: int = 200, reps: int = 100, seed: int = 0,
                             rate: float = 0.95) -> AuditIssue:
        """Share of replications where S_TVA eigenvalues are more dispersed than the true ones."""
        wins = 0
        for k, child in enumerate(PathSimulator.replication_seeds(seed, reps)):
            model = two_level_model(p, seed + k)
            sigma = PathSimulator.true_icv(model, (0.0, 1.0))
            rng = np.random.default_rng(child)
            S = CovarianceEstimators.tva_cov(PathSimulator.simulate_increments(model, n, 1.0, rng)).matrix
            wins += SpectralTools.eigenvalue_dispersion(np.linalg.eigvalsh(S)) > \
                SpectralTools.eigenvalue_dispersion(np.linalg.eigvalsh(sigma))
        return _compare("eigenvalue spreading", wins / reps, rate, "win rate", below=False)

    @staticmethod
    def split_sample_repair(p: int = 50, n: int = 100, dense_n: int = 1000, reps: int = 50,
                            seed: int = 0, rate: float = 0.9) -> AuditIssue:
        """Share of replications where split-sample QML eigenvalues are less dispersed than same-sample ones."""
        wins = 0
        cfg = SqmlConfig(J=2, J1=1)
        model = ClassCModel(np.eye(p))
        for child in PathSimulator.replication_seeds(seed, reps):
            rng = np.random.default_rng(child)
            history = ReturnsMatrix(PathSimulator.simulate_increments(model, n, 1.0, rng), np.arange(n + 1))
            U = ShrinkageQML.eigenbasis_from_history(history)
            naive = ShrinkageQML.naive_realized_eigenvalues(U, history)
            dense = PathSimulator.simulate_increments(model, dense_n, 1.0, rng)
            prices = np.hstack([np.zeros((p, 1)), np.cumsum(dense, axis=1)])
            day = SyncPanel(np.linspace(0.0, 1.0, dense_n + 1), prices, SyncScheme.REFRESH_TIME)
            est = ShrinkageQML.sqml_estimate(cfg, history, [day], basis=U)
            wins += SpectralTools.eigenvalue_dispersion(est.v_hat) < SpectralTools.eigenvalue_dispersion(naive)
        return _compare("split-sample repair", wins / reps, rate, "win rate", below=False)

    @staticmethod
    def audit_spectrum(H: SpectrumLike, y: float) -> List[AuditIssue]:
        """Checks that need only H and y."""
        issues = [RmtAuditor.delta_matches_g(H, y)]
        if y < 1:
            issues.append(RmtAuditor.psi_total(H, y))
        else:
            issues.append(AuditIssue("Psi(inf)=mean(H)", IssueSeverity.INFO,
                                     "null-space mass fixed by the total for y > 1"))
        return issues

    @staticmethod
    def run_all(seed: int = 0, quick: bool = False, H: Optional[SpectrumLike] = None,
                y: float = 0.5) -> List[AuditIssue]:
        """The full report card; quick shrinks the Monte Carlo sizes and says so on each affected line."""
        scale = 4 if quick else 1
        issues = [RmtAuditor.identity_population()]
        issues += RmtAuditor.audit_spectrum(H if H is not None else PopulationSpectrum((1.0, 3.0), (0.5, 0.5)), y)
        simulated = [
            RmtAuditor.psi_convergence(400 // scale, 800 // scale, 5, seed, 0.05 * scale),
            RmtAuditor.tva_iid_lsd(400 // scale, 800 // scale, seed, 0.05 * scale),
            RmtAuditor.eigenvalue_spreading(100, 200, 100 // scale, seed),
            RmtAuditor.split_sample_repair(50, 100, 1000, 50 // scale, seed),
        ]
        if quick:
            notes = [f"quick: p={400 // scale}, tolerance x{scale}",
                     f"quick: p={400 // scale}, tolerance x{scale}",
                     f"quick: {100 // scale} reps",
                     f"quick: {50 // scale} reps"]
            simulated = [replace(issue, message=f"{issue.message}; {note}")
                         for issue, note in zip(simulated, notes)]
        issues += simulated
        for issue in issues:
            logger.info(issue.line())
        return issues
