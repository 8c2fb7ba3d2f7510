"""Compiled inner loop for batched step log-densities.

Each step's conditional is the normalised product of up to three Gaussian
factors (sub-population, availability, tangent line). The log-density at
the realised position is computed from the residual ``g = sum_k L_k (x - m_k)``
so that absolute coordinates never enter a subtraction of large numbers.
"""
import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def individual_loglik(x, prev, nrm, off, doy, first, has_feat, begin, end, labels, active,
                      sigma2, tau2, a, b, prec, cen, out):
    """Sum step log-densities per individual into ``out``.

    Individual ``i`` owns steps ``begin[i]:end[i]``; ``labels[i]`` selects
    ``prec[labels[i]]``/``cen[labels[i]]`` as its sub-population factor.
    Inactive individuals are skipped. A step inside the season with no
    feature scores ``-inf``.
    """
    inv_s = 1.0 / sigma2
    inv_t = 1.0 / tau2
    for i in range(begin.shape[0]):
        if not active[i]:
            continue
        lab = labels[i]
        p00 = prec[lab, 0, 0]
        p01 = prec[lab, 0, 1]
        p11 = prec[lab, 1, 1]
        c0 = cen[lab, 0]
        c1 = cen[lab, 1]
        total = 0.0
        for j in range(begin[i], end[i]):
            x0 = x[j, 0]
            x1 = x[j, 1]
            dx = x0 - c0
            dy = x1 - c1
            l00 = p00
            l01 = p01
            l11 = p11
            g0 = p00 * dx + p01 * dy
            g1 = p01 * dx + p11 * dy
            if not first[j]:
                l00 += inv_s
                l11 += inv_s
                g0 += inv_s * (x0 - prev[j, 0])
                g1 += inv_s * (x1 - prev[j, 1])
                d = doy[j]
                if a < d and d < b:
                    if not has_feat[j]:
                        total = -np.inf
                        break
                    n0 = nrm[j, 0]
                    n1 = nrm[j, 1]
                    r = inv_t * (n0 * x0 + n1 * x1 - off[j])
                    l00 += inv_t * n0 * n0
                    l01 += inv_t * n0 * n1
                    l11 += inv_t * n1 * n1
                    g0 += r * n0
                    g1 += r * n1
            det = l00 * l11 - l01 * l01
            quad = (l11 * g0 * g0 - 2.0 * l01 * g0 * g1 + l00 * g1 * g1) / det
            total += -LOG_2PI + 0.5 * math.log(det) - 0.5 * quad
        out[i] = total


@njit(cache=True)
def project_to_segments(pts, start, vec, len2, lo, hi, seg_out, u_out, d2_out):
    """Nearest segment per point; ties keep the lowest segment id.

    A segment whose bounding box is already farther than the running best
    is skipped without projecting.
    """
    m = start.shape[0]
    for i in range(pts.shape[0]):
        px = pts[i, 0]
        py = pts[i, 1]
        best = np.inf
        best_j = 0
        best_u = 0.0
        for j in range(m):
            gx = max(0.0, max(lo[j, 0] - px, px - hi[j, 0]))
            gy = max(0.0, max(lo[j, 1] - py, py - hi[j, 1]))
            if gx * gx + gy * gy > best:
                continue
            rx = px - start[j, 0]
            ry = py - start[j, 1]
            u = (rx * vec[j, 0] + ry * vec[j, 1]) / len2[j]
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            dx = rx - u * vec[j, 0]
            dy = ry - u * vec[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
                best_j = j
                best_u = u
        seg_out[i] = best_j
        u_out[i] = best_u
        d2_out[i] = best
