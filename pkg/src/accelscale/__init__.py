"""Roofline-driven analysis, scaling and search for accelerator-friendly CNN families."""
