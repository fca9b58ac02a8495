"""Fair revenue-optimal auctions across two buyer groups, static and over time."""

__version__ = "0.1.0"
