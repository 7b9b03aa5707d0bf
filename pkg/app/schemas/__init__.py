"""Pydantic schemas for configs, reports, manifests and API responses."""
