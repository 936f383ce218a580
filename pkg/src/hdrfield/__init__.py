"""HDR radiance fields of indoor scenes from clipped LDR panoramas."""
__version__ = "0.1.0"
