"""
Core __init__ file for ICV Shrink engine modules.
"""

from .ingest import TickCleaner
from .sync import Synchronizer
from .simulate import PathSimulator
from .spectral import SpectralTools
from .estimators import CovarianceEstimators
from .qml import QmlEstimator
from .sqml import ShrinkageQML
from .rmt_limits import RandomMatrixLimits
from .portfolio import PortfolioBuilder
from .backtest import Backtester
from .export import ResultExporter
from .rmt_audit import RmtAuditor

__all__ = ['TickCleaner', 'Synchronizer', 'PathSimulator', 'SpectralTools', 'CovarianceEstimators',
           'QmlEstimator', 'ShrinkageQML', 'RandomMatrixLimits', 'PortfolioBuilder', 'Backtester',
           'ResultExporter', 'RmtAuditor']
