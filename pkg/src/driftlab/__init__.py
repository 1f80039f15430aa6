"""driftlab: continual adaptation of a frozen-classifier model over a stream
of unlabeled, shifting target domains, plus the metrics harness (per-domain
accuracy, mean adaptation accuracy, mean forgetting rate) that scores it.
"""

__version__ = "0.1.0"
