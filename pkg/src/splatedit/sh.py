"""Real spherical harmonics color evaluation, degrees 0..3."""
from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def color_from_dc(dc: np.ndarray) -> np.ndarray:
    """View-independent color implied by the DC coefficient alone."""
    return 0.5 + C0 * dc


def dc_from_color(color: np.ndarray) -> np.ndarray:
    return (np.asarray(color, dtype=np.float64) - 0.5) / C0


def eval_sh(dc: np.ndarray, rest: np.ndarray, dirs: np.ndarray):
    """Evaluate SH color for each splat along its viewing direction.

    dc: (N, 3), rest: (N, 3, 15) channel-major bands 1..3, dirs: (N, 3) unit.
    Returns (colors (N, 3) clipped to [0, 1], clipmask (N, 3) where the
    pre-clip value was strictly inside (0, 1) so gradients pass through).
    """
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    out = C0 * dc
    if rest.size:
        r = rest
        out = out - C1 * y * r[:, :, 0] + C1 * z * r[:, :, 1] - C1 * x * r[:, :, 2]
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out = (out
               + C2[0] * xy * r[:, :, 3]
               + C2[1] * yz * r[:, :, 4]
               + C2[2] * (2.0 * zz - xx - yy) * r[:, :, 5]
               + C2[3] * xz * r[:, :, 6]
               + C2[4] * (xx - yy) * r[:, :, 7])
        out = (out
               + C3[0] * y * (3 * xx - yy) * r[:, :, 8]
               + C3[1] * xy * z * r[:, :, 9]
               + C3[2] * y * (4 * zz - xx - yy) * r[:, :, 10]
               + C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * r[:, :, 11]
               + C3[4] * x * (4 * zz - xx - yy) * r[:, :, 12]
               + C3[5] * z * (xx - yy) * r[:, :, 13]
               + C3[6] * x * (xx - 3 * yy) * r[:, :, 14])
    out = out + 0.5
    clipmask = (out > 0.0) & (out < 1.0)
    return np.clip(out, 0.0, 1.0), clipmask
