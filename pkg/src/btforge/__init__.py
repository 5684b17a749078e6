"""Learn behavior trees for a grid platformer with greedy search and genetic programming."""

__version__ = "0.1.0"
