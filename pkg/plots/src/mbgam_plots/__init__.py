"""Render figures from mbgam effect exports and importance tables."""

from .render import PlotSpec, RenderError, render

__all__ = ["PlotSpec", "RenderError", "render"]
