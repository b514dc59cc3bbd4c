"""AP mode selection for cell-free massive MIMO with integrated sensing."""

__version__ = "0.1.0"
