"""Compile natural-language tasks into executable programs.

Co-refinement loop with retrieval over domain text and solved-sibling
code snippets, sandboxed execution with a simulate-on-failure fallback,
gold-label scoring, and corpus-level program analytics.
"""

__version__ = "0.1.0"
