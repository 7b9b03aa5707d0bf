"""Tests for the nonlocal lab."""
