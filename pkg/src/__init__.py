"""
trustplane - attestation-gated credentials for an SDN control plane
"""

__version__ = "0.1.0"
