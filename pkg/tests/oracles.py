"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package; each routine follows the model
definitions directly with plain loops.
"""
import math

import numpy as np


def renewal_loop(beta, pop, s0, hist, p, T):
    """Renewal recursion written out term by term."""
    m, d = len(pop), len(p)
    S = [s0[j] * pop[j] - sum(hist[j]) for j in range(m)]
    # past[j][k] = incidence on day k - (d - 1)
    past = [list(hist[j]) for j in range(m)]
    inc = [[0.0] * T for _ in range(m)]
    for t in range(T):
        force = [sum(p[tau - 1] * past[k][len(past[k]) - tau] for tau in range(1, d + 1)) for k in range(m)]
        new = [S[j] / pop[j] * sum(beta[j][k] * force[k] for k in range(m)) for j in range(m)]
        for j in range(m):
            new[j] = min(new[j], S[j])
            S[j] -= new[j]
            past[j].append(new[j])
            inc[j][t] = new[j]
    return np.array(inc)


def centred_average(x, window):
    h = window // 2
    T = len(x)
    out = []
    for t in range(T):
        k = min(h, t, T - 1 - t)
        seg = x[t - k : t + k + 1]
        out.append(max(sum(seg) / len(seg), 0.0))
    return np.array(out)


def gaussian_ll(Y, mean, phi_a, phi_b):
    total = 0.0
    for y, mu in zip(np.ravel(Y), np.ravel(mean)):
        sd = phi_a + phi_b * mu
        total -= math.log(math.sqrt(2 * math.pi) * sd) + (y - mu) ** 2 / (2 * sd * sd)
    return total


def design_and_response(inc, hist, pops, s0, p, r=None):
    """Stacked regression rows built one equation at a time.

    ``inc[y]`` is the (m, T) true-scale series of season ``y``.
    """
    L = len(inc)
    m = inc[0].shape[0]
    d = len(p)
    r = [1.0] * L if r is None else r
    rows, resp = [], []
    for y in range(L):
        T = inc[y].shape[1]
        full = np.concatenate([hist[y], inc[y]], axis=1)
        for j in range(m):
            cum = hist[y][j].sum()
            for t in range(T):
                S_prev = s0[y][j] * pops[y][j] - cum
                row = np.zeros(m * m)
                for k in range(m):
                    force = sum(p[tau - 1] * full[k, d - 1 + t + 1 - tau] for tau in range(1, d + 1))
                    row[j * m + k] = r[y] * S_prev / pops[y][j] * force
                rows.append(row)
                resp.append(inc[y][j, t])
                cum += inc[y][j, t]
    return np.array(rows), np.array(resp)


def lstsq_beta(X, b):
    sol, *_ = np.linalg.lstsq(X, b, rcond=None)
    m = int(round(math.sqrt(X.shape[1])))
    return sol.reshape(m, m)


def rho_eig(mat):
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(mat, dtype=float)))))


def mse_loop(estimates, truth):
    n = len(estimates)
    total = 0.0
    m = len(truth)
    for j in range(m):
        for k in range(m):
            vals = [e[j][k] for e in estimates]
            mean = sum(vals) / n
            var = sum((v - mean) ** 2 for v in vals) / n
            total += (mean - truth[j][k]) ** 2 + var
    return total
