"""Core infrastructure: settings, logging, errors, metrics and caching."""
