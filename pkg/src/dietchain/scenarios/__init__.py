"""Bundled scenario configurations, one JSON file each."""
