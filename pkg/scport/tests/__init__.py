"""Acceptance tests against the reference case study."""
