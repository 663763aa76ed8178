"""Time-independent planning and execution of multi-agent paths."""
