"""Naive literal-sum oracles shared by the tests."""

import numpy as np


def naive_coefficients(scn, U, F, selected):
    """a_k, b_k, c0_k by explicit loops over devices and correlation entries."""
    K = scn.K
    a = np.zeros(K)
    b = np.zeros(K)
    c0 = np.zeros(K)
    S = np.zeros(K)

    def h(k, m):
        if not selected[m]:
            return 0.0
        return F[k].conj() @ scn.H[m] @ U[m]

    for k in range(K):
        sl = scn.task_slice(k)
        idx = list(range(sl.start, sl.stop))
        Q = [scn.Q[m] if selected[m] else 0.0 for m in idx]
        acc_a = 0.0
        acc_c = 0.0
        for i, mi in enumerate(idx):
            for j, mj in enumerate(idx):
                r = scn.rho[k][i, j]
                acc_a += r * (Q[i] * np.conj(h(k, mj)) + Q[j] * h(k, mi))
                acc_c += r * Q[i] * Q[j]
        acc_b = 0.0
        for l in range(K):
            sll = scn.task_slice(l)
            ids = list(range(sll.start, sll.stop))
            for i, mi in enumerate(ids):
                for j, mj in enumerate(ids):
                    acc_b += scn.rho[l][i, j] * np.conj(h(k, mi)) * h(k, mj)
        a[k] = acc_a.real
        b[k] = acc_b.real + scn.sigma2 * np.linalg.norm(F[k]) ** 2 / 2
        c0[k] = acc_c
        S[k] = sum(Q)
    return a, b, c0, S


def matrix_mse(scn, U, F, selected, k, zeta, v, C):
    """Expected aggregation error from the error covariance directly.

    Own-task error coefficients ``zeta h_i - Q_i sqrt(v)`` weight the
    correlated symbols, other tasks leak in through ``zeta h``, and the noise
    adds ``zeta**2 sigma2 ||f||**2`` per channel use.
    """
    Us = np.where(selected[:, None], U, 0.0)
    h = np.array([F[k].conj() @ scn.H[m] @ Us[m] for m in range(scn.M)])
    total = 0.0
    S = 0.0
    for l in range(scn.K):
        sl = scn.task_slice(l)
        q = np.where(selected[sl], scn.Q[sl], 0.0)
        c = zeta * h[sl] - (np.sqrt(v) * q if l == k else 0.0)
        total += 2 * (c @ scn.rho[l] @ c.conj()).real
        if l == k:
            S = q.sum()
    total += zeta ** 2 * scn.sigma2 * np.linalg.norm(F[k]) ** 2
    return C * total / S ** 2


def naive_device_qcqp(scn, m, U, F, y, selected):
    """A and b of the per-device quadratic by explicit sums over receivers."""
    k = scn.task_of(m)
    sl = scn.task_slice(k)
    idx = list(range(sl.start, sl.stop))
    i = idx.index(m)
    Q = [scn.Q[j] if selected[j] else 0.0 for j in idx]
    S = sum(Q)
    N_T = scn.N_T
    A = np.zeros((N_T, N_T), dtype=complex)
    b = np.zeros(N_T, dtype=complex)
    for l in range(scn.K):
        g = scn.H[m].conj().T @ F[l]          # H_m^H f_l
        A += y[l] ** 2 * np.outer(g, g.conj())
        cross = 0.0
        for jj, mj in enumerate(idx):
            if mj == m or not selected[mj]:
                continue
            cross += scn.rho[k][i, jj] * (F[l].conj() @ scn.H[mj] @ U[mj])
        b -= y[l] ** 2 * g * cross
    rq = sum(scn.rho[k][i, jj] * Q[jj] for jj in range(len(idx)))
    b += y[k] * rq / S * (scn.H[m].conj().T @ F[k])
    return A, b


def naive_ps_quadratic(scn, k, U, y, selected):
    N_R = scn.N_R
    A = np.zeros((N_R, N_R), dtype=complex)
    for l in range(scn.K):
        sl = scn.task_slice(l)
        idx = list(range(sl.start, sl.stop))
        for i, mi in enumerate(idx):
            for j, mj in enumerate(idx):
                if selected[mi] and selected[mj]:
                    A += scn.rho[l][i, j] * np.outer(scn.H[mi] @ U[mi], (scn.H[mj] @ U[mj]).conj())
    A = y[k] ** 2 * (A + scn.sigma2 / 2 * np.eye(N_R))
    sl = scn.task_slice(k)
    idx = list(range(sl.start, sl.stop))
    Q = [scn.Q[j] if selected[j] else 0.0 for j in idx]
    b = np.zeros(N_R, dtype=complex)
    for i, mi in enumerate(idx):
        if selected[mi]:
            b += sum(scn.rho[k][i, j] * Q[j] for j in range(len(idx))) * (scn.H[mi] @ U[mi])
    return A, y[k] / sum(Q) * b
