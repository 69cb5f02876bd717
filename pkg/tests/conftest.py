"""Deterministic test configuration."""

from hypothesis import settings

# The package guarantees byte-reproducible runs; keep the property tests
# reproducible across invocations too.
settings.register_profile("deterministic", derandomize=True, deadline=None)
settings.load_profile("deterministic")
