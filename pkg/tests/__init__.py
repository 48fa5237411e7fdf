"""superinfo test suite."""
