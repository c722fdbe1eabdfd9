"""skelcanon: unsupervised 2D-to-3D skeleton motion retargeting.

A temporal-convolutional autoencoder factorizes 2D skeleton sequences
into motion, body structure and per-frame view rotation; self-supervised
view/structure canonicalization plus an adversarial reprojection loss
trains the whole model from unlabeled 2D clips. On top of the factorized
representation the package offers retargeting, canonicalization,
clustering and retrieval, both as a library and through the
``skelcanon`` command line tool.
"""

# estimator import added once the module exists
from .geometry import DEFAULT_TOPOLOGY, JointTopology

__version__ = "0.1.0"

__all__ = [
    
    "DEFAULT_TOPOLOGY",
    "JointTopology",
    "__version__",
]
