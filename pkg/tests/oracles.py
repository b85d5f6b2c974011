"""Slow, loop-based reference computations used only as test oracles.

Nothing here imports the code under test; formulas are written out pixel by
pixel with plain Python floats.
"""
import math

import numpy as np


def neighbors_at(plane_k2, m, n, J, drop_center):
    out = []
    for i in range(-J, J + 1):
        for j in range(-J, J + 1):
            if drop_center and i == 0 and j == 0:
                continue
            out.append(float(plane_k2[m + i][n + j]))
    return out


def interior_rows(plane_k1, plane_k2, J, intra):
    h, w = len(plane_k1), len(plane_k1[0])
    rows = []
    for m in range(J, h - J):
        for n in range(J, w - J):
            rows.append((float(plane_k1[m][n]), neighbors_at(plane_k2, m, n, J, intra)))
    return rows


def normal_pdf(x, mean, sd):
    return math.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))


def em_iteration(plane_k1, plane_k2, J, intra, pi, gamma, sigma, alphas, mus, lam):
    """One E-step followed by one M-step, pixel by pixel.

    Returns (pi, gamma, sigma, alphas, mus, lam) after the update. sigma^2 uses
    the updated gamma and lambda^2 the updated means.
    """
    rows = interior_rows(plane_k1, plane_k2, J, intra)
    M = len(alphas)
    tau0, iota = [], []
    for y, x in rows:
        a1 = sum(g * v for g, v in zip(gamma, x))
        p0 = pi[0] * normal_pdf(y, a1, sigma)
        comps = [alphas[c] * normal_pdf(y, mus[c], lam) for c in range(M)]
        p1 = pi[1] * sum(comps)
        tau0.append(p0 / (p0 + p1))
        iota.append([cc / sum(comps) for cc in comps])

    N = len(rows)
    s0 = sum(tau0)
    s1 = sum(1.0 - t for t in tau0)
    new_pi = [s0 / N, s1 / N]

    P = len(rows[0][1])
    A = [[0.0] * P for _ in range(P)]
    Y = [0.0] * P
    for t, (y, x) in zip(tau0, rows):
        for p in range(P):
            Y[p] += t * y * x[p]
            for q in range(P):
                A[p][q] += t * x[p] * x[q]
    new_gamma = np.linalg.solve(np.array(A), np.array(Y)).tolist()

    num = 0.0
    for t, (y, x) in zip(tau0, rows):
        r = y - sum(g * v for g, v in zip(new_gamma, x))
        num += t * r * r
    new_sigma = math.sqrt(num / s0)

    new_alphas, new_mus = [], []
    for c in range(M):
        wc = sum((1.0 - t) * io[c] for t, io in zip(tau0, iota))
        new_alphas.append(wc / s1)
        new_mus.append(sum((1.0 - t) * io[c] * y for t, io, (y, _) in zip(tau0, iota, rows)) / wc)
    lam2 = 0.0
    for t, io, (y, _) in zip(tau0, iota, rows):
        lam2 += (1.0 - t) * sum(io[c] * (y - new_mus[c]) ** 2 for c in range(M))
    new_lam = math.sqrt(lam2 / s1)
    return new_pi, new_gamma, new_sigma, new_alphas, new_mus, new_lam


def observed_loglik(plane_k1, plane_k2, J, intra, pi, gamma, sigma, alphas, mus, lam):
    total = 0.0
    for y, x in interior_rows(plane_k1, plane_k2, J, intra):
        a1 = sum(g * v for g, v in zip(gamma, x))
        p = pi[0] * normal_pdf(y, a1, sigma)
        p += pi[1] * sum(a * normal_pdf(y, mu, lam) for a, mu in zip(alphas, mus))
        total += math.log(p)
    return total


def brute_normal_equations(rows, weights):
    P = len(rows[0][1])
    A = np.zeros((P, P))
    Y = np.zeros(P)
    for w, (y, x) in zip(weights, rows):
        for p in range(P):
            Y[p] += w * y * x[p]
            for q in range(P):
                A[p, q] += w * x[p] * x[q]
    return A, Y


def textbook_rgb_to_xyz(primaries, white):
    """Classic construction: solve for per-primary scale S so that [P] S = W."""
    def XYZ(x, y):
        return [x / y, 1.0, (1 - x - y) / y]
    P = np.array([XYZ(*p) for p in primaries]).T
    S = np.linalg.inv(P) @ np.array(XYZ(*white))
    return P @ np.diag(S)


def mlr_loss(W, b, X, labels, l2):
    """Mean cross-entropy + (l2/2)||W||^2 with explicit loops."""
    total = 0.0
    for x, lab in zip(X, labels):
        scores = [sum(wi * xi for wi, xi in zip(W[c], x)) + b[c] for c in range(len(b))]
        top = max(scores)
        lse = top + math.log(sum(math.exp(s - top) for s in scores))
        total += lse - scores[lab]
    return total / len(X) + 0.5 * l2 * sum(w * w for row in W for w in row)
