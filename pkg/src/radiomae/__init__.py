"""Spatial-temporal-spectral radio map reconstruction by masked pre-training.

Subpackages: simulate (synthetic 4D maps), masks (visible/masked partitions),
graphs (geometric kNN graph), gnn (invariant message passing), model
(attention autoencoder), training (self-supervised pre-training), baselines
(kriging, mean fill), evaluate (task RMSE harness), rmapio (file formats),
cli (command line).
"""

__version__ = "0.1.0"
