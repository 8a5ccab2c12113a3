"""Simulated public/private blockchain interface for service consortia.

Consumer requests enter through a simulated public chain, are re-endorsed by
the consortium on a simulated permissioned chain, scheduled fairly among the
members, and answered through collectively signed envelopes posted back to the
public chain.
"""

__version__ = "0.1.0"
