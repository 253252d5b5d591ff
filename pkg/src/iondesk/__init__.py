"""iondesk: desk-scale trapped-ion many-body simulation toolkit."""

__version__ = "0.1.0"
