"""Camera-based parking stall vacancy detection.

A from-scratch CNN occupancy classifier with a fine-tuning trainer, a
PKLot-style dataset harness, ROC/AUC evaluation, and the surrounding system:
a persistent stall registry, a camera polling service, and an HTTP API.
"""

__version__ = "0.1.0"
