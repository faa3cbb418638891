"""Deep belief network node separation: train a DBN, find which top nodes carry faces or digits, reconstruct without the digits."""

__version__ = "0.1.0"
