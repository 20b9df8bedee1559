"""Distributed per-vertex cardinality sketches for graph queries."""
