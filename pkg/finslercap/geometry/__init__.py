"""Sphere quadrature and support-function convex bodies."""
