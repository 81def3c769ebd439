"""Seeded multi-agent harness: scenarios, stub detectors, pipeline runs, evaluation and sweeps."""
