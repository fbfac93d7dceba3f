"""cellbus: turn notebook cells into containerizable tasks, compose them into
scatter/gather workflows, plan simulated infrastructure, execute over a
content-addressed data mesh, and record ledger + provenance trails.
"""

__version__ = "0.1.0"
