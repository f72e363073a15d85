"""Composite goodness-of-fit testing with the kernel Stein discrepancy."""

from .bootstrap import BootstrapDraws, BootstrapError, draw_all, quantile
from .estimation import EstimationError, EstimatorSpec, estimate
from .kernel import KernelConfig
from .model import GaussianFamily, GaussianTheta
from .stein import ksd_u, ksd_v
from .testing import TestResult, run_test

__all__ = [
    "BootstrapDraws", "BootstrapError", "EstimationError", "EstimatorSpec", "GaussianFamily",
    "GaussianTheta", "KernelConfig", "TestResult", "draw_all", "estimate", "ksd_u", "ksd_v",
    "quantile", "run_test",
]
