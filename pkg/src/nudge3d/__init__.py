"""AOT nudging data assimilation for the 3D periodic Navier-Stokes equations."""
__version__ = "0.1.0"
