"""Free-boundary reconstruction for the vacuum poloidal-flux equation.

Two independent tools share the boundary-data layer:

* :mod:`torevac.hardy` completes Cauchy data from an arc of the outer wall
  to an inner circle by a bounded extremal problem on the annulus;
* :mod:`torevac.shape_opt` recovers the inner free boundary by adjoint
  shape-gradient descent on a least-squares misfit, using the P1 solver in
  :mod:`torevac.fem` on meshes from :mod:`torevac.mesh`.
"""

from __future__ import annotations

__version__ = "0.1.0"
