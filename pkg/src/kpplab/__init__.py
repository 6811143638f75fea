"""Fisher-KPP with Poisson selection jumps and its coordinated branching dual."""
__version__ = "0.1.0"
