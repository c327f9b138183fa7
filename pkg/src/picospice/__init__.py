"""Compact transistor-level simulator for pass-transistor XNOR and full-adder cells."""
