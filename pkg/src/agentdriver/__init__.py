"""LLM-agent driving decision pipeline and open-loop evaluation harness."""

__version__ = "0.1.0"
