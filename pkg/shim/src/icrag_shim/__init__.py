"""Statement-level executor for untrusted generated programs.

One process serves one orchestrator over newline-delimited JSON on the
standard streams; every message carries a protocol version and sequence
number, and each request ends in exactly one terminal result.
"""

__version__ = "0.1.0"

PROTOCOL_VERSION = 1
