"""Independent reference implementations used as test oracles.

These deliberately avoid the package's vectorised code paths: thresholds are
enumerated one by one and every count is taken with a plain loop.
"""
import itertools
import math
from fractions import Fraction


def threshold_grid(scores):
    """-inf, every midpoint of consecutive distinct scores, +inf."""
    u = sorted(set(scores))
    mids = [(a + b) / 2 for a, b in zip(u, u[1:])]
    return [-math.inf] + mids + [math.inf]


def confusion(scores, truth, tau):
    tp = fp = tn = fn = 0
    for s, t in zip(scores, truth):
        pred = s > tau
        if pred and t:
            tp += 1
        elif pred and not t:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def balanced_accuracy(pred, truth):
    p = sum(1 for t in truth if t)
    n = len(truth) - p
    tp = sum(1 for a, t in zip(pred, truth) if a and t)
    tn = sum(1 for a, t in zip(pred, truth) if not a and not t)
    return (tp / p + tn / n) / 2


def roc_points(scores, truth):
    """(tau, fpr, tpr) for every candidate threshold, descending tau."""
    p = sum(1 for t in truth if t)
    n = len(truth) - p
    out = []
    for tau in reversed(threshold_grid(scores)):
        tp, fp, _, _ = confusion(scores, truth, tau)
        out.append((tau, fp / n, tp / p))
    return out


def tpr_at_fpr(scores, truth, alpha):
    best = 0.0
    for _, fpr, tpr in roc_points(scores, truth):
        if fpr <= alpha:
            best = max(best, tpr)
    return best


def tnr_at_fnr(scores, truth, beta):
    best = 0.0
    for _, fpr, tpr in roc_points(scores, truth):
        if 1 - tpr <= beta:
            best = max(best, 1 - fpr)
    return best


def exact_balanced_accuracy(pred, truth):
    """Balanced accuracy as an exact rational, so tied thresholds compare equal."""
    p = sum(1 for t in truth if t)
    n = len(truth) - p
    tp = sum(1 for a, t in zip(pred, truth) if a and t)
    tn = sum(1 for a, t in zip(pred, truth) if not a and not t)
    return (Fraction(tp, p) + Fraction(tn, n)) / 2


def best_threshold_ba(scores, truth):
    """Best balanced accuracy (exact rational) of any rule ``score > t`` on a dense grid including all data points."""
    u = sorted(set(scores))
    grid = [-math.inf, math.inf] + u
    grid += [(a + b) / 2 for a, b in zip(u, u[1:])]
    grid += [a + (b - a) * f for a, b in zip(u, u[1:]) for f in (0.01, 0.99)]
    best = Fraction(0)
    for t in grid:
        best = max(best, exact_balanced_accuracy([s > t for s in scores], truth))
    return best


def rmia_bruteforce(lr_x, lr_pop, gamma):
    count = 0
    for z in lr_pop:
        if lr_x / z >= gamma:
            count += 1
    return count / len(lr_pop)


def gaussian_logpdf(x, mu, var):
    return -0.5 * math.log(2 * math.pi * var) - (x - mu) ** 2 / (2 * var)


def all_labelings(n):
    return itertools.product((False, True), repeat=n)
