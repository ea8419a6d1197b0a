"""Figure generation from the disklayer CLI's CSV artifacts.

Pure presentation: nothing here recomputes physics. Each figure kind
maps to one CSV schema; schema mismatches raise SchemaError naming the
missing columns, and no image file is written on error.
"""

from .figures import KINDS, FigureSpec, SchemaError, plot

__all__ = ["FigureSpec", "SchemaError", "plot", "KINDS"]
__version__ = "0.1.0"
