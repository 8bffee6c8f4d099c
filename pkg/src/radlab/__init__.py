"""radlab: representation-based anomaly detection and localization lab.

Trains a contrastive encoder on synthetic normal images, fits density
models (GMM, coupling flow) on its representations, scores anomalies by
representation NLL and localizes them with back-propagated NLL gradients,
with VAE/ceVAE baselines and AUROC/AUPRC evaluation.
"""

__version__ = "0.1.0"
