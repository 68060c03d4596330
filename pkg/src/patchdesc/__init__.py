"""patchdesc: sampling-invariant local surface descriptors.

Subpackages:
  patchgen   synthetic polynomial patch generation and dataset I/O
  geomcore   point-cloud and mesh primitives (knn, alignment, Delaunay,
             cotangent Laplacian, spectra, geodesics)
  deltaops   gradient/divergence/curl/Laplacian operators on point clouds
  neuralnet  autodiff engine, descriptor encoder, contrastive training
  baselines  HKS / WKS / SHOT-lite classical descriptors and PCA
  correspond dense descriptors, matching, functional maps, refinement
  cli        command-line entry points
"""

__version__ = "0.1.0"
