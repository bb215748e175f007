"""Drive-induced transition rates of a transmon under strong readout driving."""

__version__ = "0.1.0"
