"""Few-shot graph anomaly detection by meta-transfer of pretrained node embeddings."""

__version__ = "0.1.0"
