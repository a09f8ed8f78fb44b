"""Power-efficient submarine line design: EDFA surrogate, GFF-scarce link model and RL pre-emphasis."""
