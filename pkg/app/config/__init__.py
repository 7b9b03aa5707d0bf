"""Configuration package for the nonlocal lab."""
