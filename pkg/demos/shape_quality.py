"""Angles and reference maps of anisotropically refined tets.

Run:  python demos/shape_quality.py

Graded refinement towards an edge produces ever flatter tets, and the
largest face angle approaches 180 degrees.  The element quality is still
under control: every graded tet maps onto one fixed reference tet by a
diagonal scaling plus a shear, and the shear stays bounded.  The quality
table lists, per level, the largest face angle, the number of similarity
classes, the vertex offset c_T along the edge and the largest shear.
"""

import numpy as np

from anisofem import TetType, build_domain, refine
from anisofem.shape import angle_trajectory, quality_csv, quality_rows, reference_tet

T0 = np.array([[0, 0, 0], [0, 0, 1.0], [0.8, 0, 0.3], [0.2, 0.7, 0.6]])
That, _ = reference_tet(T0)
traj = np.degrees(angle_trajectory(That, TetType.E, 8, kappa_e=0.2))
print("max face angle of a refined E-tet, κ_e = 0.2:")
print("  " + "  ".join(f"{a:.2f}" for a in traj))

dom = build_domain("prism", kappa_edge=0.2)
mesh = refine(dom.mesh, dom.singular, 4)
print()
print(quality_csv(quality_rows(mesh, dom.singular)))
