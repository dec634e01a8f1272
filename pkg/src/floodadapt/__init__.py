"""Episodic climate-adaptation simulator for pluvial flooding and road transport.

The package chains four coupled models into a deterministic yearly
simulation: climate-period rainfall sampling (quantile tables), raster
flooding on a DEM (fill-spill-merge), a simplified four-step travel demand
model (gravity seed + IPF + shortest-time routing), and monetized
infrastructure / delay impacts. On top sits an episodic MDP environment in
which per-zone road-elevation policies are trained and evaluated.
"""

__version__ = "0.1.0"
