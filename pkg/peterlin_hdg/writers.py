"""
Result files: convergence and diagnostics tables, field dumps, run manifest.
"""

import json
import logging
import os
from datetime import datetime

import numpy as np
import pandas as pd

from .basis_quadrature import eval_cell_basis

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6g"
VTK_TRIANGLE = 5
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _ensure_parent(path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    return path


# ============================================
# TABLES
# ============================================

def write_convergence_csv(report, path):
    report.to_csv(_ensure_parent(path))
    logger.info(f"💾 Wrote {len(report.table)} convergence rows to {path}")
    return path


def write_diagnostics_csv(results, path):
    """One row per step per run; `run` names the run the step belongs to."""
    frames = []
    for result in results:
        frame = result.frame
        frame.insert(0, "run", result.label)
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    table.to_csv(_ensure_parent(path), index=False, float_format=FLOAT_FORMAT)
    logger.info(f"💾 Wrote {len(table):,} diagnostics rows to {path}")
    return path


# ============================================
# FIELD DUMPS
# ============================================

def vertex_fields(mesh, layout, state):
    """Cellwise values at the three vertices of every cell (duplicated points)."""
    phi, _ = eval_cell_basis(layout.degree, REFERENCE_VERTICES)
    chi, _ = eval_cell_basis(layout.degree - 1, REFERENCE_VERTICES)
    u = np.einsum("vb,tib->tvi", phi, state.u)
    C = np.einsum("vb,tmb->tvm", phi, state.C)
    p = np.einsum("vb,tb->tv", chi, state.p)
    return {
        "velocity": u.reshape(-1, 2),
        "pressure": p.ravel(),
        "C11": C[..., 0].ravel(),
        "C12": C[..., 1].ravel(),
        "C22": C[..., 2].ravel(),
        "detC": (C[..., 0] * C[..., 2] - C[..., 1] ** 2).ravel(),
    }


def write_vtk(path, mesh, layout, state, title=None):
    """Legacy ASCII unstructured grid with discontinuous P1 point data."""
    points = mesh.vertices[mesh.cells].reshape(-1, 2)
    n_points, n_cells = len(points), mesh.n_cells
    fields = vertex_fields(mesh, layout, state)

    with open(_ensure_parent(path), "w") as fp:
        fp.write("# vtk DataFile Version 2.0\n")
        fp.write(f"{title or f'peterlin-hdg t={state.t:.6g}'}\n")
        fp.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fp.write(f"POINTS {n_points} double\n")
        for x, y in points:
            fp.write(f"{x:.12e} {y:.12e} 0.0\n")
        fp.write(f"CELLS {n_cells} {4 * n_cells}\n")
        for cell in range(n_cells):
            fp.write(f"3 {3 * cell} {3 * cell + 1} {3 * cell + 2}\n")
        fp.write(f"CELL_TYPES {n_cells}\n")
        fp.write(f"{VTK_TRIANGLE}\n" * n_cells)

        fp.write(f"POINT_DATA {n_points}\n")
        fp.write("VECTORS velocity double\n")
        for ux, uy in fields["velocity"]:
            fp.write(f"{ux:.12e} {uy:.12e} 0.0\n")
        for name in ("pressure", "C11", "C12", "C22", "detC"):
            fp.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for value in fields[name]:
                fp.write(f"{value:.12e}\n")
    logger.debug(f"💾 Wrote field dump {path}")
    return path


def dump_name(label, t):
    return f"fields_{label}_t{t:.4f}.vtk"


# ============================================
# MANIFEST
# ============================================

def build_manifest(config, status, runs, files, version, message=None):
    return {
        "status": status,
        "message": message,
        "version": version,
        "created": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        "config": config.model_dump(),
        "runs": runs,
        "files": sorted(files),
    }


def write_manifest(path, manifest):
    with open(_ensure_parent(path), "w") as f:
        json.dump(manifest, f, indent=2, default=float)
    logger.info(f"💾 Manifest saved to {path} (status {manifest['status']})")
    return path
