"""Synthetic captioning bias laboratory.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from capbias._core import *  # noqa: F401,F403
from capbias._core import __doc__  # noqa: F401

__version__ = "0.1.0"
