"""Brute-force reference implementations used by the test-suite.

These are written for clarity, not speed, and share no code with the package.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def ap_bruteforce(scores, labels) -> float:
    """AP by recomputing precision/recall from scratch at every distinct threshold."""
    scores = [float(s) for s in scores]
    labels = [int(y) for y in labels]
    n_pos = sum(labels)
    terms = []
    prev_tp = 0
    for thr in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= thr]
        tp = sum(picked)
        terms.append((tp - prev_tp) / n_pos * (tp / len(picked)))
        prev_tp = tp
    return math.fsum(terms)


def ap_threshold_sweep(scores, labels) -> float:
    """Same threshold enumeration as `ap_bruteforce`, with numpy masks for speed."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    terms = []
    prev_tp = 0
    for thr in sorted(set(scores.tolist()), reverse=True):
        mask = scores >= thr
        tp = int(labels[mask].sum())
        terms.append((tp - prev_tp) / n_pos * (tp / int(mask.sum())))
        prev_tp = tp
    return math.fsum(terms)


def ap_exact(scores, labels) -> Fraction:
    scores = [float(s) for s in scores]
    n_pos = sum(int(y) for y in labels)
    total = Fraction(0)
    prev = Fraction(0)
    for thr in sorted(set(scores), reverse=True):
        picked = [int(y) for s, y in zip(scores, labels) if s >= thr]
        r = Fraction(sum(picked), n_pos)
        p = Fraction(sum(picked), len(picked))
        total += (r - prev) * p
        prev = r
    return total


def split_gain(GL, HL, GR, HR, lam, gamma):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


def best_split_bruteforce(X, g, h, lam=1.0, gamma=0.0, rtol=1e-10):
    """(feature, threshold) with the maximal gain over every feature and every
    midpoint between consecutive distinct values; near-ties (relative
    tolerance) go to the lowest feature and then the lowest threshold.
    Returns None when no candidate has positive gain.
    """
    X = np.asarray(X, dtype=np.float64)
    cands = []
    G = math.fsum(g)
    H = math.fsum(h)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            if t <= a:
                t = b
            left = X[:, f] < t
            GL = math.fsum(np.asarray(g)[left])
            HL = math.fsum(np.asarray(h)[left])
            cands.append((split_gain(GL, HL, G - GL, H - HL, lam, gamma), f, t))
    if not cands:
        return None
    best = max(c[0] for c in cands)
    if not best > 0:
        return None
    tol = rtol * (abs(best) + G * G / (H + lam))
    near = [(f, t) for gain, f, t in cands if gain >= best - tol]
    return min(near)


def majority_runs_by_intersection(intervals, t_lo, t_hi):
    """Positive runs of a 2-of-3 majority from interval algebra.

    `intervals` holds, per labeler, a list of disjoint [a, b) positive
    intervals on an integer grid. The positive set is the union of the
    pairwise intersections; returns its maximal runs clipped to [t_lo, t_hi).
    """
    pieces = []
    for i in range(3):
        for j in range(i + 1, 3):
            for a1, b1 in intervals[i]:
                for a2, b2 in intervals[j]:
                    a, b = max(a1, a2, t_lo), min(b1, b2, t_hi)
                    if b > a:
                        pieces.append((a, b))
    pieces.sort()
    merged = []
    for a, b in pieces:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def band_power_direct(x, nfft, fs, lo, hi, inclusive_hi=False):
    """Hann-windowed, zero-padded one-sided band power by an explicit DFT sum."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    w = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / (n - 1)) for i in range(n)])
    xw = x * w
    total = 0.0
    for k in range(nfft // 2 + 1):
        f = k * fs / nfft
        if not (f >= lo and (f <= hi if inclusive_hi else f < hi)):
            continue
        re = sum(xw[i] * math.cos(2 * math.pi * k * i / nfft) for i in range(n))
        im = -sum(xw[i] * math.sin(2 * math.pi * k * i / nfft) for i in range(n))
        weight = 1.0 if k == 0 or (nfft % 2 == 0 and k == nfft // 2) else 2.0
        total += weight * (re * re + im * im) / (nfft * float(np.sum(w * w)))
    return total


def teager_mean(x):
    x = list(map(float, x))
    return sum(x[i] ** 2 - x[i - 1] * x[i + 1] for i in range(1, len(x) - 1)) / (len(x) - 2)
