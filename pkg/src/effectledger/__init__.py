"""effectledger: consensus on execution effects over heterogeneous engines.

Organizations execute ordered transaction blocks on their own relational
engines, hash the per-block change digests into ledger blocks, and commit a
block only when enough organizations computed the same effect hash.  Divergent
organizations recover from checkpoints by replaying their own ledger.
"""

__version__ = "0.1.0"
