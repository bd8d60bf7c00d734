"""Federated distillation with selective knowledge sharing.

Clients with heterogeneous local models exchange predictions on an unlabeled
proxy pool. A per-client KuLSIF density-ratio selector withholds predictions
on proxy samples outside the client's local distribution, and a server-side
selector drops ensemble predictions that are too ambiguous.
"""

__version__ = "0.1.0"
