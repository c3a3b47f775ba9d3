"""Command-line interface and report emission."""
