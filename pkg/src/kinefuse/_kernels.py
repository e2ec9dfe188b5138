"""Batched FK / FK-backward / IK kernels.

Two implementations of each kernel live here: ``*_nb`` (numba, explicit
loops over frames and joints) and ``*_np`` (numpy, vectorised over frames,
looping over joints). :mod:`kinefuse.kinelayers` picks one through
``_accel.USE_NUMBA``; the tests check that both agree.

Shared argument layout (``N`` frames, ``J`` joints):

``T``        (N, 3)     root translation
``q``        (N, J, 4)  raw pose quaternions, root row ignored; each row is
                        normalised inside the kernel
``parents``  (J,)       parent index, -1 for the root
``order``    (J,)       top-down traversal order, root first
``offsets``  (J, 4)     rest term inserted before each joint's rotation
``bones``    (J, 3)     rest bone vectors in each joint's local frame

The ``fk_override`` kernels also take ``G_ovr`` (N, J, 4) and a boolean
``mask`` (N, J): where set, the bone's total rotation is ``G_ovr`` (normalised)
instead of the chained product, and its gradient is returned w.r.t. ``G_ovr``.
"""
import math

import numpy as np

from ._accel import njit

PARALLEL_TOL = 1e-8


# ---------------------------------------------------------------------------
# numba scalar helpers

@njit
def _qmul(a, b, out):
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    out[0] = aw * bw - ax * bx - ay * by - az * bz
    out[1] = aw * bx + ax * bw + ay * bz - az * by
    out[2] = aw * by - ax * bz + ay * bw + az * bx
    out[3] = aw * bz + ax * by - ay * bx + az * bw


@njit
def _qrot(q, v, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    out[0] = v[0] + w * tx + (y * tz - z * ty)
    out[1] = v[1] + w * ty + (z * tx - x * tz)
    out[2] = v[2] + w * tz + (x * ty - y * tx)


@njit
def _qmat(q, m):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[0, 1] = 2.0 * (x * y - w * z)
    m[0, 2] = 2.0 * (x * z + w * y)
    m[1, 0] = 2.0 * (x * y + w * z)
    m[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[1, 2] = 2.0 * (y * z - w * x)
    m[2, 0] = 2.0 * (x * z - w * y)
    m[2, 1] = 2.0 * (y * z + w * x)
    m[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit
def _canon(q):
    lead = q[0]
    if lead == 0.0:
        lead = q[1]
        if lead == 0.0:
            lead = q[2]
            if lead == 0.0:
                lead = q[3]
    if lead < 0.0:
        for i in range(4):
            q[i] = -q[i]


@njit
def _canonical_solve(u, v, out):
    """Quaternion rotating direction ``u`` onto direction ``v``; 0 on success, 1 if degenerate."""
    nu = math.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    nv = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if nu <= 1e-9 or nv <= 1e-9:
        return 1
    cx = u[1] * v[2] - u[2] * v[1]
    cy = u[2] * v[0] - u[0] * v[2]
    cz = u[0] * v[1] - u[1] * v[0]
    c = math.sqrt(cx * cx + cy * cy + cz * cz)
    d = u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
    if c < PARALLEL_TOL * nu * nv:
        if d > 0.0:
            out[0] = 1.0
            out[1] = 0.0
            out[2] = 0.0
            out[3] = 0.0
            return 0
        # antiparallel: half turn about the rejection of the smallest-component basis vector
        ax = abs(u[0])
        ay = abs(u[1])
        az = abs(u[2])
        k = 0
        if ay < ax and ay <= az:
            k = 1
        elif az < ax and az < ay:
            k = 2
        ex = 1.0 if k == 0 else 0.0
        ey = 1.0 if k == 1 else 0.0
        ez = 1.0 if k == 2 else 0.0
        dot = (ex * u[0] + ey * u[1] + ez * u[2]) / (nu * nu)
        px = ex - dot * u[0]
        py = ey - dot * u[1]
        pz = ez - dot * u[2]
        n = math.sqrt(px * px + py * py + pz * pz)
        out[0] = 0.0
        out[1] = px / n
        out[2] = py / n
        out[3] = pz / n
        _canon(out)
        return 0
    angle = math.atan2(c, d)
    s = math.sin(0.5 * angle) / c
    out[0] = math.cos(0.5 * angle)
    out[1] = s * cx
    out[2] = s * cy
    out[3] = s * cz
    return 0


# ---------------------------------------------------------------------------
# numba kernels

@njit
def _grad_through_normalize(u, D, n, dn, out):
    """Gradient w.r.t. raw ``u`` of ``<D, R(u / |u|)>``; ``n`` and ``dn`` are scratch."""
    norm = math.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2 + u[3] ** 2)
    for a in range(4):
        n[a] = u[a] / norm
    w, x, y, z = n[0], n[1], n[2], n[3]
    dn[0] = 2.0 * (-z * D[0, 1] + y * D[0, 2] + z * D[1, 0] - x * D[1, 2]
                   - y * D[2, 0] + x * D[2, 1])
    dn[1] = 2.0 * (y * D[0, 1] + z * D[0, 2] + y * D[1, 0] - 2.0 * x * D[1, 1]
                   - w * D[1, 2] + z * D[2, 0] + w * D[2, 1] - 2.0 * x * D[2, 2])
    dn[2] = 2.0 * (-2.0 * y * D[0, 0] + x * D[0, 1] + w * D[0, 2] + x * D[1, 0]
                   + z * D[1, 2] - w * D[2, 0] + z * D[2, 1] - 2.0 * y * D[2, 2])
    dn[3] = 2.0 * (-2.0 * z * D[0, 0] - w * D[0, 1] + x * D[0, 2] + w * D[1, 0]
                   - 2.0 * z * D[1, 1] + y * D[1, 2] + x * D[2, 0] + y * D[2, 1])
    radial = n[0] * dn[0] + n[1] * dn[1] + n[2] * dn[2] + n[3] * dn[3]
    for a in range(4):
        out[a] = (dn[a] - radial * n[a]) / norm


@njit
def fk_nb(T, q, parents, order, offsets, bones):
    N = q.shape[0]
    J = q.shape[1]
    pos = np.empty((N, J, 3))
    G = np.empty((N, J, 4))
    n = np.empty(4)
    tmp = np.empty(4)
    b = np.empty(3)
    for f in range(N):
        for jj in range(J):
            j = order[jj]
            p = parents[j]
            if p < 0:
                G[f, j, 0] = 1.0
                G[f, j, 1] = 0.0
                G[f, j, 2] = 0.0
                G[f, j, 3] = 0.0
                for a in range(3):
                    pos[f, j, a] = T[f, a]
                continue
            norm = math.sqrt(q[f, j, 0] ** 2 + q[f, j, 1] ** 2 + q[f, j, 2] ** 2 + q[f, j, 3] ** 2)
            for a in range(4):
                n[a] = q[f, j, a] / norm
            _qmul(G[f, p], offsets[j], tmp)
            _qmul(tmp, n, G[f, j])
            _qrot(G[f, j], bones[j], b)
            for a in range(3):
                pos[f, j, a] = pos[f, p, a] + b[a]
    return pos, G


@njit
def fk_backward_nb(T, q, parents, order, offsets, bones, grad):
    N = q.shape[0]
    J = q.shape[1]
    dT = np.zeros((N, 3))
    dq = np.zeros((N, J, 4))
    _, G = fk_nb(T, q, parents, order, offsets, bones)
    S = np.empty((J, 3))
    C = np.empty((J, 3, 3))
    W = np.empty((J, 3))
    pre = np.empty(4)
    Rpre = np.empty((3, 3))
    Rg = np.empty((3, 3))
    M = np.empty((3, 3))
    D = np.empty((3, 3))
    n = np.empty(4)
    dn = np.empty(4)
    for f in range(N):
        for j in range(J):
            for a in range(3):
                S[j, a] = grad[f, j, a]
                for c in range(3):
                    C[j, a, c] = 0.0
        # bottom-up accumulation of subtree gradient sums and outer products
        for jj in range(J - 1, -1, -1):
            j = order[jj]
            p = parents[j]
            if p < 0:
                for a in range(3):
                    dT[f, a] = S[j, a]
                continue
            _qrot(G[f, j], bones[j], W[j])
            for a in range(3):
                for c in range(3):
                    C[j, a, c] += S[j, a] * W[j, c]
            for a in range(3):
                S[p, a] += S[j, a]
                for c in range(3):
                    C[p, a, c] += C[j, a, c]
        for jj in range(J):
            j = order[jj]
            p = parents[j]
            if p < 0:
                continue
            _qmul(G[f, p], offsets[j], pre)
            _qmat(pre, Rpre)
            _qmat(G[f, j], Rg)
            # D = Rpre^T C_j Rg
            for a in range(3):
                for c in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += C[j, a, k] * Rg[k, c]
                    M[a, c] = acc
            for a in range(3):
                for c in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += Rpre[k, a] * M[k, c]
                    D[a, c] = acc
            _grad_through_normalize(q[f, j], D, n, dn, dq[f, j])
    return dT, dq


@njit
def fk_override_nb(T, q, parents, order, offsets, bones, G_ovr, mask):
    N = q.shape[0]
    J = q.shape[1]
    pos = np.empty((N, J, 3))
    G = np.empty((N, J, 4))
    n = np.empty(4)
    tmp = np.empty(4)
    b = np.empty(3)
    for f in range(N):
        for jj in range(J):
            j = order[jj]
            p = parents[j]
            if p < 0:
                G[f, j, 0] = 1.0
                G[f, j, 1] = 0.0
                G[f, j, 2] = 0.0
                G[f, j, 3] = 0.0
                for a in range(3):
                    pos[f, j, a] = T[f, a]
                continue
            if mask[f, j]:
                norm = math.sqrt(G_ovr[f, j, 0] ** 2 + G_ovr[f, j, 1] ** 2
                                 + G_ovr[f, j, 2] ** 2 + G_ovr[f, j, 3] ** 2)
                for a in range(4):
                    G[f, j, a] = G_ovr[f, j, a] / norm
            else:
                norm = math.sqrt(q[f, j, 0] ** 2 + q[f, j, 1] ** 2 + q[f, j, 2] ** 2 + q[f, j, 3] ** 2)
                for a in range(4):
                    n[a] = q[f, j, a] / norm
                _qmul(G[f, p], offsets[j], tmp)
                _qmul(tmp, n, G[f, j])
            _qrot(G[f, j], bones[j], b)
            for a in range(3):
                pos[f, j, a] = pos[f, p, a] + b[a]
    return pos, G


@njit
def fk_override_backward_nb(T, q, parents, order, offsets, bones, G_ovr, mask, grad):
    N = q.shape[0]
    J = q.shape[1]
    dG = np.zeros((N, J, 4))
    _, G = fk_override_nb(T, q, parents, order, offsets, bones, G_ovr, mask)
    S = np.empty((J, 3))
    C = np.empty((J, 3, 3))
    W = np.empty(3)
    Rg = np.empty((3, 3))
    D = np.empty((3, 3))
    n = np.empty(4)
    dn = np.empty(4)
    for f in range(N):
        for j in range(J):
            for a in range(3):
                S[j, a] = grad[f, j, a]
                for c in range(3):
                    C[j, a, c] = 0.0
        # rotation sensitivity stops at overridden joints, translation does not
        for jj in range(J - 1, -1, -1):
            j = order[jj]
            p = parents[j]
            if p < 0:
                continue
            _qrot(G[f, j], bones[j], W)
            for a in range(3):
                for c in range(3):
                    C[j, a, c] += S[j, a] * W[c]
            for a in range(3):
                S[p, a] += S[j, a]
            if not mask[f, j]:
                for a in range(3):
                    for c in range(3):
                        C[p, a, c] += C[j, a, c]
        for j in range(J):
            if parents[j] < 0 or not mask[f, j]:
                continue
            _qmat(G[f, j], Rg)
            for a in range(3):
                for c in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += C[j, a, k] * Rg[k, c]
                    D[a, c] = acc
            _grad_through_normalize(G_ovr[f, j], D, n, dn, dG[f, j])
    return dG


@njit
def ik_nb(pos, parents, order, offsets, bones, override, mask):
    """Returns ``(T, q, status)``; ``status`` is -1 or the flat index ``f * J + j`` of a zero bone."""
    N = pos.shape[0]
    J = pos.shape[1]
    T = np.empty((N, 3))
    q = np.zeros((N, J, 4))
    G = np.empty((J, 4))
    total = np.empty(4)
    pre = np.empty(4)
    b = np.empty(3)
    for f in range(N):
        for jj in range(J):
            j = order[jj]
            p = parents[j]
            if p < 0:
                q[f, j, 0] = 1.0
                G[j, 0] = 1.0
                G[j, 1] = 0.0
                G[j, 2] = 0.0
                G[j, 3] = 0.0
                for a in range(3):
                    T[f, a] = pos[f, j, a]
                continue
            for a in range(3):
                b[a] = pos[f, j, a] - pos[f, p, a]
            if mask[f, j]:
                for a in range(4):
                    total[a] = override[f, j, a]
            elif _canonical_solve(bones[j], b, total) != 0:
                return T, q, f * J + j
            # q_j = (G_pa * A_j)^-1 * q_total
            _qmul(G[p], offsets[j], pre)
            pre[1] = -pre[1]
            pre[2] = -pre[2]
            pre[3] = -pre[3]
            _qmul(pre, total, q[f, j])
            norm = math.sqrt(q[f, j, 0] ** 2 + q[f, j, 1] ** 2 + q[f, j, 2] ** 2 + q[f, j, 3] ** 2)
            for a in range(4):
                q[f, j, a] /= norm
            _canon(q[f, j])
            for a in range(4):
                G[j, a] = total[a]
    return T, q, -1


# ---------------------------------------------------------------------------
# numpy kernels

def _np_qmul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def _np_qrot(q, v):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.stack([
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    ], axis=-1)


def _np_qmat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)], axis=-1),
        np.stack([2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)], axis=-1),
        np.stack([2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def _np_canon(q):
    lead = np.where(q[..., 0] != 0, q[..., 0],
                    np.where(q[..., 1] != 0, q[..., 1], np.where(q[..., 2] != 0, q[..., 2], q[..., 3])))
    return np.where((lead < 0)[..., None], -q, q)


def _np_canonical_solve(u, v):
    """Vectorised version of ``_canonical_solve`` for one rest bone ``u`` and many ``v``."""
    nu = math.sqrt(float(u @ u))
    nv = np.sqrt(np.sum(v * v, axis=-1))
    cross = np.cross(u, v)
    c = np.sqrt(np.sum(cross * cross, axis=-1))
    d = v @ u
    out = np.empty(v.shape[:-1] + (4,))
    regular = c >= PARALLEL_TOL * nu * nv
    angle = np.arctan2(c, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.sin(0.5 * angle) / c
        out[..., 1:] = s[..., None] * cross
    out[..., 0] = np.cos(0.5 * angle)
    parallel = ~regular & (d > 0)
    out[parallel] = (1.0, 0.0, 0.0, 0.0)
    anti = ~regular & ~(d > 0)
    if np.any(anti):
        absu = np.abs(u)
        k = 0
        if absu[1] < absu[0] and absu[1] <= absu[2]:
            k = 1
        elif absu[2] < absu[0] and absu[2] < absu[1]:
            k = 2
        e = np.zeros(3)
        e[k] = 1.0
        perp = e - (e @ u) / (nu * nu) * u
        perp /= np.linalg.norm(perp)
        out[anti] = _np_canon(np.concatenate([[0.0], perp]))
    return out


def _np_grad_through_normalize(u, D):
    """Gradient w.r.t. raw ``u`` (N, 4) of ``<D, R(u / |u|)>`` for (N, 3, 3) ``D``."""
    norm = np.sqrt(np.sum(u * u, axis=-1, keepdims=True))
    n = u / norm
    w, x, y, z = n[:, 0], n[:, 1], n[:, 2], n[:, 3]
    dn = 2.0 * np.stack([
        -z * D[:, 0, 1] + y * D[:, 0, 2] + z * D[:, 1, 0] - x * D[:, 1, 2] - y * D[:, 2, 0] + x * D[:, 2, 1],
        y * D[:, 0, 1] + z * D[:, 0, 2] + y * D[:, 1, 0] - 2.0 * x * D[:, 1, 1] - w * D[:, 1, 2]
        + z * D[:, 2, 0] + w * D[:, 2, 1] - 2.0 * x * D[:, 2, 2],
        -2.0 * y * D[:, 0, 0] + x * D[:, 0, 1] + w * D[:, 0, 2] + x * D[:, 1, 0] + z * D[:, 1, 2]
        - w * D[:, 2, 0] + z * D[:, 2, 1] - 2.0 * y * D[:, 2, 2],
        -2.0 * z * D[:, 0, 0] - w * D[:, 0, 1] + x * D[:, 0, 2] + w * D[:, 1, 0] - 2.0 * z * D[:, 1, 1]
        + y * D[:, 1, 2] + x * D[:, 2, 0] + y * D[:, 2, 1],
    ], axis=-1)
    radial = np.sum(n * dn, axis=-1, keepdims=True)
    return (dn - radial * n) / norm


def fk_np(T, q, parents, order, offsets, bones):
    N, J = q.shape[:2]
    pos = np.empty((N, J, 3))
    G = np.empty((N, J, 4))
    norm = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    for j in order:
        p = parents[j]
        if p < 0:
            G[:, j] = (1.0, 0.0, 0.0, 0.0)
            pos[:, j] = T
            continue
        G[:, j] = _np_qmul(_np_qmul(G[:, p], offsets[j]), q[:, j] / norm[:, j])
        pos[:, j] = pos[:, p] + _np_qrot(G[:, j], bones[j])
    return pos, G


def fk_backward_np(T, q, parents, order, offsets, bones, grad):
    N, J = q.shape[:2]
    _, G = fk_np(T, q, parents, order, offsets, bones)
    S = np.array(grad, dtype=float, copy=True)
    C = np.zeros((N, J, 3, 3))
    dT = np.zeros((N, 3))
    dq = np.zeros((N, J, 4))
    for j in order[::-1]:
        p = parents[j]
        if p < 0:
            dT[:] = S[:, j]
            continue
        W = _np_qrot(G[:, j], bones[j])
        C[:, j] += S[:, j, :, None] * W[:, None, :]
        S[:, p] += S[:, j]
        C[:, p] += C[:, j]
    for j in order:
        p = parents[j]
        if p < 0:
            continue
        Rpre = _np_qmat(_np_qmul(G[:, p], offsets[j]))
        Rg = _np_qmat(G[:, j])
        D = np.swapaxes(Rpre, -1, -2) @ C[:, j] @ Rg
        dq[:, j] = _np_grad_through_normalize(q[:, j], D)
    return dT, dq


def fk_override_np(T, q, parents, order, offsets, bones, G_ovr, mask):
    N, J = q.shape[:2]
    pos = np.empty((N, J, 3))
    G = np.empty((N, J, 4))
    qn = q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    ovr_norm = np.sqrt(np.sum(G_ovr * G_ovr, axis=-1, keepdims=True))
    gn = G_ovr / np.where(mask[..., None], ovr_norm, 1.0)
    for j in order:
        p = parents[j]
        if p < 0:
            G[:, j] = (1.0, 0.0, 0.0, 0.0)
            pos[:, j] = T
            continue
        chained = _np_qmul(_np_qmul(G[:, p], offsets[j]), qn[:, j])
        G[:, j] = np.where(mask[:, j, None], gn[:, j], chained)
        pos[:, j] = pos[:, p] + _np_qrot(G[:, j], bones[j])
    return pos, G


def fk_override_backward_np(T, q, parents, order, offsets, bones, G_ovr, mask, grad):
    N, J = q.shape[:2]
    _, G = fk_override_np(T, q, parents, order, offsets, bones, G_ovr, mask)
    S = np.array(grad, dtype=float, copy=True)
    C = np.zeros((N, J, 3, 3))
    dG = np.zeros((N, J, 4))
    for j in order[::-1]:
        p = parents[j]
        if p < 0:
            continue
        W = _np_qrot(G[:, j], bones[j])
        C[:, j] += S[:, j, :, None] * W[:, None, :]
        S[:, p] += S[:, j]
        C[:, p] += np.where(mask[:, j, None, None], 0.0, C[:, j])
    for j in order:
        if parents[j] < 0 or not mask[:, j].any():
            continue
        D = C[:, j] @ _np_qmat(G[:, j])
        safe = np.where(mask[:, j, None], G_ovr[:, j], (1.0, 0.0, 0.0, 0.0))
        dG[:, j] = np.where(mask[:, j, None], _np_grad_through_normalize(safe, D), 0.0)
    return dG


def ik_np(pos, parents, order, offsets, bones, override, mask):
    N, J = pos.shape[:2]
    T = np.empty((N, 3))
    q = np.zeros((N, J, 4))
    G = np.empty((N, J, 4))
    for j in order:
        p = parents[j]
        if p < 0:
            q[:, j, 0] = 1.0
            G[:, j] = (1.0, 0.0, 0.0, 0.0)
            T[:] = pos[:, j]
            continue
        b = pos[:, j] - pos[:, p]
        short = np.sqrt(np.sum(b * b, axis=-1)) <= 1e-9
        short &= ~mask[:, j]
        if np.any(short):
            return T, q, int(np.argmax(short)) * J + int(j)
        total = np.where(mask[:, j, None], override[:, j], _np_canonical_solve(bones[j], b))
        pre = _np_qmul(G[:, p], offsets[j]) * np.array([1.0, -1.0, -1.0, -1.0])
        local = _np_qmul(pre, total)
        local /= np.sqrt(np.sum(local * local, axis=-1, keepdims=True))
        q[:, j] = _np_canon(local)
        G[:, j] = total
    return T, q, -1
