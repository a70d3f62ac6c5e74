"""Free time minimizers of the Newtonian N-body problem by direct methods."""
__version__ = "0.1.0"
