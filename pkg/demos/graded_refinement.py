"""Grade a mesh towards the reentrant edge of the prism and look at the result.

Run:  python demos/graded_refinement.py [out_dir]

The prism's singular set is the reentrant edge and its two endpoints.  With
κ_e = 0.2 every refinement puts the new vertex on an edge leaving the
singular edge at one fifth of its length, so tets pile up near the edge
while the far field is refined uniformly.  The script prints the tet census
by type and the distance of the closest off-edge vertex for a few levels,
then writes the level-3 mesh as VTK for a viewer such as ParaView.
"""

import sys
from pathlib import Path

import numpy as np

from anisofem import TetType, build_domain, check_conformity, export_vtk, refine_mesh, save_mesh
from anisofem.weights import distance_rho

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(".")

dom = build_domain("prism", kappa_edge=0.2)
S = dom.singular
edge = S.edges[0]

mesh = dom.mesh
print("level   tets  vertices   min distance to edge   census (O V VE E EV)")
for level in range(4):
    if level:
        mesh = refine_mesh(mesh, S)
    assert not check_conformity(mesh)
    rho = distance_rho(mesh.points, edge)
    off = rho[rho > 1e-12].min()
    if level == 0:
        off0 = off
    c = mesh.census()
    counts = " ".join(str(c[t.name]) for t in TetType)
    print(f"{level:5d} {mesh.n_tets:6d} {mesh.n_points:9d} {off:22.3e}   {counts}")

# the closest vertices move in by κ_e per level instead of 1/2
print(f"level-3 distance over level-0 distance: {off / off0:.4f} (κ_e^3 = {0.2**3:.4f}, uniform {0.5**3:.4f})")

export_vtk(mesh, out_dir / "prism_level3.vtk", title="prism, kappa_e = 0.2, level 3")
save_mesh(mesh, out_dir / "prism_level3.mesh")
print("wrote", out_dir / "prism_level3.vtk", "and", out_dir / "prism_level3.mesh")
