"""
xfer: lexical transfer of small transformer encoders to new languages
"""

__version__ = "1.0.0"
