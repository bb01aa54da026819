"""Intrinsic-domain single-image HDR reconstruction at desk scale.

Submodules: ``image`` (containers and pixel helpers), ``intrinsic``
(albedo/shading algebra), ``isp`` (synthetic scenes and camera model),
``autodiff`` and ``losses`` (reverse-mode training losses), ``models`` and
``training`` (toy networks and the three-stage pipeline), ``evaluation`` and
``pu21`` (scoring protocol), ``codecs`` and ``cli`` (files and commands).
"""

__version__ = "0.1.0"
