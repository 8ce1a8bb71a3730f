"""dynrep: bidirectional dynamic representations of short-term motion
inferred from still frames, with a rank-loss trainer, per-window oracle
solvers, multi-level assembly and a ranking/regression evaluation harness.
"""

__version__ = "0.1.0"
