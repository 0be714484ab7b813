"""Compiled leapfrog stepper for the split-field acoustic scheme.

Fields are stored as (batch, nz, nx) arrays, row 0 being the free surface.
Each batch member is an independent wavefield sharing the medium.  The
total field and the half-node fluxes carry ghost layers so that the
stencil loops are branch-free; ghosts are refilled every step, by
mirroring across a Neumann edge or with zeros past a Dirichlet edge.
"""

import numba as nb
import numpy as np

G = 2  # ghost width of the total field


@nb.njit(cache=True, nogil=True)
def _fill_ghosts(u, nz, nx, mirror_x, mirror_bottom):
    # u has shape (nz + 2G, nx + 2G); interior at [G:G+nz, G:G+nx]
    for j in range(G, G + nz):
        for k in range(1, G + 1):
            if mirror_x:
                u[j, G - k] = u[j, G + k]
                u[j, G + nx - 1 + k] = u[j, G + nx - 1 - k]
            else:
                u[j, G - k] = 0.0
                u[j, G + nx - 1 + k] = 0.0
    for k in range(1, G + 1):
        for i in range(nx + 2 * G):
            u[G - k, i] = u[G + k, i]
            if mirror_bottom:
                u[G + nz - 1 + k, i] = u[G + nz - 1 - k, i]
            else:
                u[G + nz - 1 + k, i] = 0.0


@nb.njit(cache=True, nogil=True)
def _fluxes(u, cx2, cz2, qx, qz, c1, c2, inv_h, nz, nx, mirror_x, mirror_bottom):
    """Half-node fluxes c^2 D+ u.

    qx[j, m + 1] sits at x-index m - 1/2 for m = -1..nx+1 (one ghost each
    side); qz[m + 1, i] likewise in z.  Rows are taken as views so the
    inner loops see unit-stride 1d arrays.
    """
    a1 = c1 * inv_h
    a2 = c2 * inv_h
    for j in range(nz):
        uj = u[j + G]
        cj = cx2[j]
        qj = qx[j]
        for m in range(nx + 1):
            a = m + G
            qj[m + 1] = cj[m] * (a1 * (uj[a] - uj[a - 1]) + a2 * (uj[a + 1] - uj[a - 2]))
        if mirror_x:
            qj[0] = -qj[3]
            qj[nx + 2] = -qj[nx - 1]
        else:
            qj[0] = 0.0
            qj[nx + 2] = 0.0
    for m in range(nz + 1):
        a = m + G
        r0 = u[a - 2]
        r1 = u[a - 1]
        r2 = u[a]
        r3 = u[a + 1]
        cm = cz2[m]
        qm = qz[m + 1]
        for i in range(nx):
            ui = i + G
            qm[i] = cm[i] * (a1 * (r2[ui] - r1[ui]) + a2 * (r3[ui] - r0[ui]))
    q0 = qz[0]
    q3 = qz[3]
    qb = qz[nz + 2]
    qb3 = qz[nz - 1]
    for i in range(nx):
        q0[i] = -q3[i]
        qb[i] = -qb3[i] if mirror_bottom else 0.0


@nb.njit(cache=True, nogil=True)
def _update(ux, uz, uxp, uzp, u, qx, qz, ax1, ax2, axi, dz_coef, s, c1, c2):
    # uxp/uzp hold the previous step on entry and the next one on exit;
    # u (ghosted) receives the partial sum, sources are added afterwards
    nz, nx = ux.shape
    for j in range(nz):
        az1 = dz_coef[j, 0]
        az2 = dz_coef[j, 1]
        azi = dz_coef[j, 2]
        qxj = qx[j]
        qz0 = qz[j]
        qz1 = qz[j + 1]
        qz2 = qz[j + 2]
        qz3 = qz[j + 3]
        uxj = ux[j]
        uzj = uz[j]
        uxpj = uxp[j]
        uzpj = uzp[j]
        uj = u[j + G]
        for i in range(nx):
            lx = c1 * (qxj[i + 2] - qxj[i + 1]) + c2 * (qxj[i + 3] - qxj[i])
            lz = c1 * (qz2[i] - qz1[i]) + c2 * (qz3[i] - qz0[i])
            vx = (ax1[i] * uxj[i] - ax2[i] * uxpj[i] + s * lx) * axi[i]
            vz = (az1 * uzj[i] - az2 * uzpj[i] + s * lz) * azi
            uxpj[i] = vx
            uzpj[i] = vz
            uj[i + G] = vx + vz


@nb.njit(cache=True, nogil=True)
def run_leapfrog(
    cx2, cz2, dx_coef, dz_coef, dt, h, c1, c2, mirror_x, mirror_bottom,
    nbatch, nt,
    src_field, src_j0, src_i0, src_w, src_series,
    rec_field, rec_j, rec_i,
    patch_field, patch_j0, patch_i0, patch_size,
):
    """Advance nbatch wavefields nt steps from rest.

    cx2 (nz, nx+1) and cz2 (nz+1, nx) hold c^2 at half nodes, index m at
    m - 1/2.  dx_coef[i] / dz_coef[j] hold (a1, a2, inv) with
    u_new = (a1 * u - a2 * u_prev + dt^2 L u) * inv per split component.
    Sources add dt^2 * w * series[n] to the x-component after step n.
    Returns (traces, patches, failed_step) with failed_step = -1 if finite.
    """
    nz = cz2.shape[0] - 1
    nx = cx2.shape[1] - 1
    ux = np.zeros((nbatch, nz, nx))
    uz = np.zeros((nbatch, nz, nx))
    uxp = np.zeros((nbatch, nz, nx))
    uzp = np.zeros((nbatch, nz, nx))
    u = np.zeros((nbatch, nz + 2 * G, nx + 2 * G))
    qx = np.zeros((nz, nx + 3))
    qz = np.zeros((nz + 3, nx))
    nrec = rec_field.shape[0]
    npatch = patch_field.shape[0]
    traces = np.zeros((nrec, nt + 1))
    patches = np.zeros((npatch, nt + 1, patch_size, patch_size))
    dt2 = dt * dt
    inv_h = 1.0 / h
    nsrc = src_field.shape[0]
    ssz = src_w.shape[1]
    failed = -1
    ax1 = np.ascontiguousarray(dx_coef[:, 0])
    ax2 = np.ascontiguousarray(dx_coef[:, 1])
    axi = np.ascontiguousarray(dx_coef[:, 2])
    for n in range(nt):
        for b in range(nbatch):
            ub = u[b]
            _fill_ghosts(ub, nz, nx, mirror_x, mirror_bottom)
            _fluxes(ub, cx2, cz2, qx, qz, c1, c2, inv_h, nz, nx, mirror_x, mirror_bottom)
            _update(ux[b], uz[b], uxp[b], uzp[b], ub, qx, qz, ax1, ax2, axi, dz_coef,
                    dt2 * inv_h, c1, c2)
        for s in range(nsrc):
            b = src_field[s]
            amp = dt2 * src_series[s, n]
            if amp != 0.0:
                for a in range(ssz):
                    for c in range(ssz):
                        wv = src_w[s, a, c]
                        if wv != 0.0:
                            uxp[b, src_j0[s] + a, src_i0[s] + c] += amp * wv
                            u[b, src_j0[s] + a + G, src_i0[s] + c + G] += amp * wv
        ux, uxp = uxp, ux
        uz, uzp = uzp, uz
        for r in range(nrec):
            traces[r, n + 1] = u[rec_field[r], rec_j[r] + G, rec_i[r] + G]
        for p in range(npatch):
            for a in range(patch_size):
                for c in range(patch_size):
                    patches[p, n + 1, a, c] = u[patch_field[p], patch_j0[p] + a + G,
                                                patch_i0[p] + c + G]
        if n % 50 == 49 or n == nt - 1:
            ok = True
            for r in range(nrec):
                if not np.isfinite(traces[r, n + 1]):
                    ok = False
            for b in range(nbatch):
                if not np.isfinite(u[b, nz // 2 + G, nx // 2 + G]):
                    ok = False
            if not ok:
                failed = n + 1
                break
    return traces, patches, failed
