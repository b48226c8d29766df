"""Immune-inspired load balancing for shared-memory multi-agent VLSI netlist extraction."""

__version__ = "0.1.0"
