"""Box-level collaborative perception: compact box messages lifted into ego-frame BEV features."""

__version__ = "0.1.0"
