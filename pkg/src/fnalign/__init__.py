"""Two-stage pipeline for the false-negative problem in distantly supervised
relation extraction: mine probable false negatives from the N/A set with an
early-stopped noise filter, then adversarially align the mined bags with the
positive training distribution and assign pseudo labels."""

__version__ = "0.1.0"
