"""Teacher-forced likelihood traces and greedy predictions from causal LMs."""

__version__ = "0.1.0"

from trace_extractor.extract import ExtractionJob, extract_traces, generate_predictions

__all__ = ["ExtractionJob", "extract_traces", "generate_predictions"]
