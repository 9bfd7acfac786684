"""Two-stage geocentric pose ensemble at desk scale.

A U-Net predicts per-pixel above-ground elevation from RGB; the elevation is
stacked onto the RGB channels and a second network regresses the viewing
scale and angle. Everything runs on a small numpy autodiff engine.
"""

__version__ = "0.1.0"
