"""Independent reference implementations used by the tests."""

import itertools

import numpy as np


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def breslow_exact(beta, X, time, event):
    """Partial likelihood by explicit risk-set enumeration (no ties assumed)."""
    eta = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    ll = 0.0
    for i in range(len(time)):
        if event[i]:
            risk = [j for j in range(len(time)) if time[j] >= time[i]]
            ll += eta[i] - np.log(sum(np.exp(eta[j]) for j in risk))
    return ll


def c_index_pairs(eta, time, event):
    num = den = 0.0
    for i, j in itertools.permutations(range(len(time)), 2):
        if event[i] and time[i] < time[j]:
            den += 1
            if eta[i] > eta[j]:
                num += 1
            elif eta[i] == eta[j]:
                num += 0.5
    return num / den


def entropy_direct(vectors, i, tau, exclude_self=True):
    terms = []
    for j in range(len(vectors)):
        if exclude_self and j == i:
            continue
        terms.append(np.exp(vectors[j] @ vectors[i] / tau))
    p = np.array(terms) / sum(terms)
    return float(-sum(q * np.log(q) for q in p if q > 0))
