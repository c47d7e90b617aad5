"""Optimal deterministic policies for MDPs under LTL constraints via mixed-integer programming."""

__version__ = "0.1.0"
