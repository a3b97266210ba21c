"""lsth: a workload-driven benchmark harness for log-structured table formats."""

__version__ = "0.1.0"
