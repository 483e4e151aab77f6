"""Hot loops, each with a numba and a numpy implementation."""
