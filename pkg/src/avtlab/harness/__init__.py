"""Run harness: simulation clock, seeded randomness, reports, corpus
generation, the command-line interface, and the live socket server."""
