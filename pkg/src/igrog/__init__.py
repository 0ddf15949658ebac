"""Implicit GROG: learned through-time k-space gridding for non-Cartesian MRI.

Submodules are imported on demand so that ``igrog.cli`` can configure thread
counts before numerical libraries load.
"""

__version__ = "0.1.0"

__all__ = [
    "core",
    "sim",
    "nufft",
    "dcf",
    "grog",
    "mlpkit",
    "implicit",
    "fieldcorr",
    "recon",
    "analysis",
    "cli",
]
