"""Host-side multi-layer event tracing for Android: probe address resolution, event
decoding, filtering and dispatch, and dropper / privilege-escalation signatures."""

__version__ = "0.1.0"
