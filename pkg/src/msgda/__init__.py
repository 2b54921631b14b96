"""Multi-source graph domain adaptation for social bot detection.

Trains bot-vs-human node classifiers on several labeled source graphs and
transfers them to an unlabeled target graph via cross-source message passing,
selective weighted adversarial alignment, and inference-time anomaly
refinement, all on synthetic verifiable data.
"""

__version__ = "0.1.0"
