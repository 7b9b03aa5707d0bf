"""API package for the nonlocal lab."""
