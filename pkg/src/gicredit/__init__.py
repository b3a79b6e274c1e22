"""Credit term structures with risky times: forward curves against a measure
with atoms, drift-condition audits, and structural and affine default models."""

__version__ = "0.1.0"
