"""DMSP to VIIRS nighttime-light harmonization with contrastive unpaired translation.

Submodules are imported on demand; the package root only exposes the version.
"""

__version__ = "0.1.0"
