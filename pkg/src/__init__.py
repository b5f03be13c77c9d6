"""NLOS-LTM - passive non-line-of-sight imaging with light transport modulation."""
