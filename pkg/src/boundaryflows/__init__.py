"""Numerical laboratory for boundary-map renormalization.

Submodules: conformal (Moebius maps in light-cone coordinates), groups
(reflection groups and pole searches), renormalization (zooms and
schedules), affine (Euler limits and flows), tangentfields (far-field
deviation fields), experiments (scenario pipelines), cli, acceptance.
"""

__version__ = "0.1.0"
