"""Grating optimal-control pulses for single-spin magnetometry.

Submodules
----------
bloch        exact two-level propagation and excitation profiles
grape        grating targets and gradient-ascent pulse optimization
sensitivity  closed-form contrast / sensitivity model
fieldmodel   monopole and pseudopole tip fields, field maps, model fits
imaging      fringe-image simulation and field reconstruction
io           pulse, profile and matrix file formats
recipes      desk-scale pipelines behind the figure reproductions
plotting     figure rendering (matplotlib, Agg)
cli          the ``nvgrating`` command-line tool
"""

__version__ = "0.1.0"

TWO_PI = 6.283185307179586
