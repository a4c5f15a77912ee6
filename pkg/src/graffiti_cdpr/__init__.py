"""Planning, control and simulation for a planar graffiti-painting cable robot."""

__version__ = "0.1.0"
