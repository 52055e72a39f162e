"""Init test file."""
