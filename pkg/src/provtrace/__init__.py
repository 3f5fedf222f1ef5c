"""provtrace: provenance forensics over system-call traces."""

__version__ = "0.1.0"
