"""Set-based BlindMI variants over label-free sorted posterior vectors."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist, pdist

from miaudit.errors import ConfigurationError, DataValidationError

VARIANTS = ("diff_w", "diff_single", "diff_bi", "one_class")


def sorted_posteriors(posteriors) -> np.ndarray:
    return -np.sort(-np.asarray(posteriors, dtype=np.float64), axis=1)


def median_bandwidth(points) -> float:
    d = pdist(points)
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def gaussian_kernel(a, b, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth ** 2))


def mmd2(kernel: np.ndarray, in_a: np.ndarray, in_b: np.ndarray) -> float:
    """Biased squared MMD between two index masks over a shared kernel matrix."""
    na, nb = in_a.sum(), in_b.sum()
    saa = kernel[np.ix_(in_a, in_a)].sum()
    sbb = kernel[np.ix_(in_b, in_b)].sum()
    sab = kernel[np.ix_(in_a, in_b)].sum()
    return float(saa / na ** 2 + sbb / nb ** 2 - 2 * sab / (na * nb))


class _TwoSets:
    """Incrementally maintained kernel sums for sets A (candidate members) and B."""

    def __init__(self, kernel, in_a, in_b):
        self.k = kernel
        self.in_a = in_a.copy()
        self.in_b = in_b.copy()
        self.row_a = kernel[:, self.in_a].sum(axis=1)
        self.row_b = kernel[:, self.in_b].sum(axis=1)
        self.saa = float(self.row_a[self.in_a].sum())
        self.sbb = float(self.row_b[self.in_b].sum())
        self.sab = float(self.row_b[self.in_a].sum())
        self.na = int(self.in_a.sum())
        self.nb = int(self.in_b.sum())

    @staticmethod
    def _value(saa, sbb, sab, na, nb):
        if na == 0 or nb == 0:
            return -np.inf
        return saa / na ** 2 + sbb / nb ** 2 - 2 * sab / (na * nb)

    def value(self):
        return self._value(self.saa, self.sbb, self.sab, self.na, self.nb)

    def moved_value(self, x, to_b: bool = True):
        kxx = self.k[x, x]
        if to_b:
            saa = self.saa - 2 * self.row_a[x] + kxx
            sbb = self.sbb + 2 * self.row_b[x] + kxx
            sab = self.sab - self.row_b[x] + self.row_a[x] - kxx
            return self._value(saa, sbb, sab, self.na - 1, self.nb + 1)
        sbb = self.sbb - 2 * self.row_b[x] + kxx
        saa = self.saa + 2 * self.row_a[x] + kxx
        sab = self.sab - self.row_a[x] + self.row_b[x] - kxx
        return self._value(saa, sbb, sab, self.na + 1, self.nb - 1)

    def move(self, x, to_b: bool = True):
        kxx = self.k[x, x]
        col = self.k[:, x]
        if to_b:
            self.saa += -2 * self.row_a[x] + kxx
            self.sbb += 2 * self.row_b[x] + kxx
            self.sab += -self.row_b[x] + self.row_a[x] - kxx
            self.in_a[x], self.in_b[x] = False, True
            self.row_a -= col
            self.row_b += col
            self.na, self.nb = self.na - 1, self.nb + 1
        else:
            self.sbb += -2 * self.row_b[x] + kxx
            self.saa += 2 * self.row_a[x] + kxx
            self.sab += -self.row_a[x] + self.row_b[x] - kxx
            self.in_b[x], self.in_a[x] = False, True
            self.row_b -= col
            self.row_a += col
            self.na, self.nb = self.na + 1, self.nb - 1


def blindmi_diff(target_feats, reference_feats, variant: str, pass_cap: int = 20) -> np.ndarray:
    """Membership decisions (1 = member) for each target row."""
    t = np.asarray(target_feats, dtype=np.float64)
    r = np.asarray(reference_feats, dtype=np.float64)
    n = len(t)
    pts = np.vstack([t, r])
    kernel = gaussian_kernel(pts, pts, median_bandwidth(pts))
    in_a = np.zeros(len(pts), dtype=bool)
    in_a[:n] = True
    in_b = ~in_a
    if variant == "diff_w":
        sets = _TwoSets(kernel, in_a, in_b)
        for _ in range(pass_cap):
            base = sets.value()
            cand = np.flatnonzero(sets.in_a[:n])
            if len(cand) <= 1:
                break
            flagged = [x for x in cand if sets.moved_value(x) > base]
            if not flagged:
                break
            # the reference anchor stays fixed: flagged samples leave A but do not join B
            keep_a = sets.in_a.copy()
            keep_a[flagged] = False
            if not keep_a.any():
                keep_a[cand[0]] = True
            sets = _TwoSets(kernel, keep_a, in_b)
        return sets.in_a[:n].astype(np.float64)
    if variant not in ("diff_single", "diff_bi"):
        raise ConfigurationError(f"unknown BlindMI variant {variant!r}")
    sets = _TwoSets(kernel, in_a, in_b)
    for _ in range(pass_cap):
        changed = False
        for x in range(n):
            if sets.in_a[x]:
                if sets.na > 1 and sets.moved_value(x, to_b=True) > sets.value():
                    sets.move(x, to_b=True)
                    changed = True
            elif variant == "diff_bi" and sets.moved_value(x, to_b=False) > sets.value():
                sets.move(x, to_b=False)
                changed = True
        if not changed:
            break
    return sets.in_a[:n].astype(np.float64)


def blindmi_one_class(target_feats, reference_feats, k: int = 5) -> np.ndarray:
    """Mean distance to the ``k`` nearest reference non-members (far = member-like)."""
    r = np.asarray(reference_feats, dtype=np.float64)
    if len(r) < k:
        raise ConfigurationError(f"one-class BlindMI needs at least k={k} reference points, got {len(r)}")
    d = cdist(np.asarray(target_feats, dtype=np.float64), r)
    return np.sort(d, axis=1)[:, :k].mean(axis=1)


def blindmi_scores(targets, reference, variant: str, *, k: int = 5, pass_cap: int = 20) -> np.ndarray:
    if len(targets) == 0 or len(reference) == 0:
        raise DataValidationError("BlindMI needs non-empty target and reference sets")
    tf, rf = sorted_posteriors(targets.posteriors), sorted_posteriors(reference.posteriors)
    if variant == "one_class":
        return blindmi_one_class(tf, rf, k)
    return blindmi_diff(tf, rf, variant, pass_cap)
