"""voxport: tile-based point-cloud video sampling, saliency, and viewport prediction.

The package is organized around the stages of the prediction pipeline:

- ``frames`` / ``ply`` / ``tiling`` / ``knn``: point-cloud data model and geometry
- ``sampling``: uniform-random sampling (URS) plus baseline samplers and the
  DaCVV / IFMI sampling-quality metrics
- ``autodiff``: minimal reverse-mode tensor engine used by all networks
- ``saliency``: spatial (LDC) and temporal (TC) saliency branches
- ``trajectory``: LSTM head-state forecasting
- ``viewport``: frustum geometry, FoV labeling, multi-user ground truth
- ``fusion`` / ``pipeline``: attention fusion, classifier head, training loop
- ``metrics``: accuracy / MIoU evaluation
- ``cli``: the ``voxport`` command-line entry point

Hot geometry kernels (exact KNN, farthest-point sampling, pairwise scans) are
numba-compiled by default; set ``VOXPORT_BACKEND=numpy`` to force the pure
numpy fallbacks.
"""

from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
