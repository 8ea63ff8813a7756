"""Zero-trust flow control for software-defined networks, at desk scale.

Learns per-entity communication requirements from packet traces, trains
per-edge access-request and flow-behavior detectors, mines least-privilege
flow rules with their associations, and enforces everything inside a
deterministic simulated data plane.
"""

__version__ = "0.1.0"
