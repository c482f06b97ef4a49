"""Entanglement genesis under continuous two-qubit parity measurement.

Simulates conditioned quantum trajectories of two qubits monitored by a
single parity meter, computes concurrence along them, and validates Monte
Carlo ensembles against closed-form crossing probabilities and
first-passage-time laws.
"""

__version__ = "0.1.0"
