"""Frequency-guided category discovery toolkit.

Modules: spectral (FFT + amplitude swap), domain_sep (KNN density + GMM
partitioning), perturbation (CDFP/IDFP + memory bank), model_core (MLP
encoder/projection/prototypes with hand-derived gradients), objectives
(contrastive/clustering/entropy losses), sampler (difficulty-aware
resampling), evaluation (Hungarian ClusterAcc), datagen (synthetic
two-domain benchmark), cli/training (orchestration).
"""

__version__ = "0.1.0"
