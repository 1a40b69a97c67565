"""Multiple-instance learning over financial news headlines: trading days
are bags, headlines are instances, and daily close-to-close direction is
the bag label."""

__version__ = "0.1.0"
