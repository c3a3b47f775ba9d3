"""Scenario file schema and object registry."""
