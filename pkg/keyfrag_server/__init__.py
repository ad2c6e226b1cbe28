#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

__version__ = "0.2.0"

__all__ = ["__version__"]
