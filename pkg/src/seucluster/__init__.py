"""Group flip-flops of a circuit by expected SEU criticality and check the grouping by fault injection."""

__version__ = "0.1.0"
