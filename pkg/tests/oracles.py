"""Independent slow reference implementations used only by the tests."""
import math

import numpy as np
from scipy import integrate, stats


def ece_bruteforce(conf, correct, n_bins):
    """Loop over bins (lo, hi] with the first bin closed at 0."""
    n = len(conf)
    total = 0.0
    for m in range(n_bins):
        lo, hi = m / n_bins, (m + 1) / n_bins
        members = [i for i in range(n)
                   if (lo < conf[i] <= hi) or (m == 0 and conf[i] == 0.0)]
        if not members:
            continue
        acc = sum(float(correct[i]) for i in members) / len(members)
        c = sum(conf[i] for i in members) / len(members)
        total += len(members) / n * abs(acc - c)
    return total


def auroc_pairwise(pos, neg):
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def auarc_trapezoid(values):
    """Trapezoid rule over the k/n grid, closed at fraction 1 by the last value."""
    n = len(values)
    x = np.append(np.arange(n) / n, 1.0)
    y = np.append(values, values[-1])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


def reject_curve_bruteforce(uncertainty, pred, true, balanced=False):
    n = len(true)
    order = sorted(range(n), key=lambda i: (-uncertainty[i], i))
    out = []
    for k in range(n):
        keep = order[k:]
        if not balanced:
            out.append(sum(pred[i] == true[i] for i in keep) / len(keep))
        else:
            classes = sorted({true[i] for i in keep})
            recalls = []
            for c in classes:
                members = [i for i in keep if true[i] == c]
                recalls.append(sum(pred[i] == c for i in members) / len(members))
            out.append(sum(recalls) / len(recalls))
    return np.array(out)


def binary_entropy(p):
    return -sum(x * math.log(x) for x in p if x > 0) / math.log(len(p))


def points_in_polygon(px, py, poly):
    """Even-odd ray casting for arrays of points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xint)
    return inside


def coverage_supersampled(cell, polygons, k=256, seed=0):
    """Fraction of k x k stratified samples of the unit cell inside any polygon.

    One jittered point per sub-cell; a plain midpoint lattice would carry a
    1/(2k) bias on edges that run through lattice points.
    """
    x, y = cell
    rng = np.random.default_rng(seed)
    t = np.arange(k) / k
    px, py = np.meshgrid(x + t, y + t)
    px = px + rng.random(px.shape) / k
    py = py + rng.random(py.shape) / k
    hit = np.zeros(px.shape, dtype=bool)
    for poly in polygons:
        hit |= points_in_polygon(px, py, np.asarray(poly, dtype=float))
    return float(hit.mean())


def kl_quadrature(mu, sigma):
    """KL(N(mu, sigma^2) || N(0,1)) by numeric integration of q log(q/p)."""
    q = stats.norm(mu, sigma)
    p = stats.norm(0.0, 1.0)
    lo, hi = mu - 12 * sigma, mu + 12 * sigma
    val, _ = integrate.quad(lambda w: q.pdf(w) * (q.logpdf(w) - p.logpdf(w)), lo, hi,
                            epsabs=1e-12, epsrel=1e-12, limit=200)
    return val
