"""lateconsensus test suite."""
