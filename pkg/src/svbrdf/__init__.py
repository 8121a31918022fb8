"""Single-image SVBRDF capture toolkit.

Subpackages cover the full pipeline: material map containers and codecs
(:mod:`svbrdf.maps`, :mod:`svbrdf.imageio`), the analytic microfacet shading
model (:mod:`svbrdf.shading`), a differentiable flash/point-light plane
renderer (:mod:`svbrdf.render`), physical auto-exposure (:mod:`svbrdf.exposure`),
a minimal reverse-mode tensor engine (:mod:`svbrdf.autodiff`), the estimation
networks (:mod:`svbrdf.networks`), training losses (:mod:`svbrdf.losses`),
procedural dataset generation (:mod:`svbrdf.datagen`), and the training /
evaluation entry points (:mod:`svbrdf.training`).
"""

__version__ = "0.1.0"
