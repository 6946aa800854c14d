"""Built-in benchmark cases: partitioned oscillator and 1D heat equation."""
