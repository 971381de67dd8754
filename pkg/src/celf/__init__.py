"""Channel estimation from a site-trained loss field.

Modules: ``geometry`` (links, grids, ellipse weights), ``pathloss``,
``prior``, ``estimator``, ``evaluation``, ``dataset``, ``io`` and ``cli``.
"""

__version__ = "0.1.0"
