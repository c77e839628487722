"""Symmetric simple exclusion on Z: graphical-construction simulation, exact
small-system oracles and statistical checks of the t^(1/4) fluctuation laws."""

__version__ = "0.1.0"
