"""Variance analytics on fitted coefficient vectors.

In an orthonormal tensor basis the ANOVA term ``f_u`` of a partial sum is
exactly the part of the sum whose frequencies are supported on ``u``, so
term variances and global sensitivity indices follow from Parseval's
identity without any further integration.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from anovacheb.core import AnovaTermSet, CoefficientVector, GroupedIndexSet, Term
from anovacheb.errors import DegenerateModelError, FormatError, InvalidThresholdError, UnknownTermError

REPORT_VERSION = 1


def variance_from_coefficients(h: CoefficientVector) -> float:
    """``sum_{k != 0} c_k^2``."""
    v = h.values
    c0 = h.constant if () in h.index_set.term_set else 0.0
    return float(np.dot(v, v) - c0 * c0)


def term_variance(h: CoefficientVector, u) -> float:
    u = tuple(u)
    if u not in h.index_set.term_set:
        raise UnknownTermError(f"term {u} is not in the model's term set")
    if not u:
        return 0.0
    b = h.values[h.index_set.block_slice(u)]
    return float(np.dot(b, b))


def project_coefficients(h: CoefficientVector, u) -> np.ndarray:
    """Coefficients of the ANOVA term ``f_u``: the block supported exactly on ``u``."""
    u = tuple(u)
    if u not in h.index_set.term_set:
        raise UnknownTermError(f"term {u} is not in the model's term set")
    return h.block(u).copy()


def truncate(h: CoefficientVector, terms: AnovaTermSet) -> CoefficientVector:
    """Restrict a model to the terms in ``terms`` (truncated ANOVA decomposition)."""
    idx = h.index_set
    bl = {}
    for u in terms:
        if u not in idx.term_set:
            raise UnknownTermError(f"term {u} is not in the model's term set")
        bl[u] = idx.bandlimits[u]
    sub = GroupedIndexSet(terms, bl)
    return CoefficientVector(sub, np.concatenate([h.values[idx.block_slice(u)] for u in sub.terms]))


@dataclass
class SensitivityReport:
    total_variance: float
    term_variances: Dict[Term, float]
    gsi: Dict[Term, float]
    d: int
    detected_active_set: Optional[AnovaTermSet] = None
    thresholds: Optional[Sequence[float]] = None

    def ranked(self):
        """Terms sorted by decreasing GSI (ties in term order)."""
        order = list(self.gsi)
        return sorted(order, key=lambda u: (-self.gsi[u], order.index(u)))

    def to_dict(self):
        doc = {
            "formatVersion": REPORT_VERSION,
            "d": self.d,
            "totalVariance": self.total_variance,
            "terms": [
                {"u": list(u), "variance": self.term_variances[u], "gsi": self.gsi.get(u)}
                for u in self.term_variances
            ],
        }
        if self.detected_active_set is not None:
            doc["activeSet"] = self.detected_active_set.to_list()
            doc["closureAdded"] = [list(u) for u in self.detected_active_set.closure_added]
            doc["thresholds"] = list(self.thresholds)
        return doc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc) -> "SensitivityReport":
        try:
            if doc.get("formatVersion") != REPORT_VERSION:
                raise FormatError(f"unsupported report version {doc.get('formatVersion')!r}")
            tv = {tuple(t["u"]): float(t["variance"]) for t in doc["terms"]}
            gsi = {tuple(t["u"]): float(t["gsi"]) for t in doc["terms"] if t["u"]}
            d = int(doc["d"])
            active = None
            if "activeSet" in doc:
                active = AnovaTermSet(d, tuple(tuple(u) for u in doc["activeSet"]),
                                      tuple(tuple(u) for u in doc.get("closureAdded", [])))
            return cls(float(doc["totalVariance"]), tv, gsi, d, active, doc.get("thresholds"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed sensitivity report: {exc}") from exc


def global_sensitivity_indices(h: CoefficientVector) -> SensitivityReport:
    """Term variances and their shares of the total variance."""
    idx = h.index_set
    tv = {u: term_variance(h, u) for u in idx.terms}
    total = float(math.fsum(tv.values()))
    if not total > 0.0:
        raise DegenerateModelError("model has zero variance; global sensitivity indices are undefined")
    gsi = {u: tv[u] / total for u in idx.terms if u}
    return SensitivityReport(total, tv, gsi, idx.d)


def _check_thresholds(eps, max_order):
    eps = [float(e) for e in np.atleast_1d(eps)]
    if len(eps) == 1 and max_order > 1:
        eps = eps * max_order
    if len(eps) < max_order:
        raise InvalidThresholdError(f"need a threshold for every order up to {max_order}, got {eps}")
    for e in eps:
        if not 0.0 < e < 1.0:
            raise InvalidThresholdError(f"thresholds must lie in (0, 1), got {e}")
    return eps


def detect_active_set(report: SensitivityReport, eps, closure=True) -> AnovaTermSet:
    """Keep ``u`` when ``gsi(u) > eps[|u| - 1]``; the empty term is always kept.

    With ``closure`` every subset of a kept term is added as well and listed
    in ``closure_added``.  The result is stored on the report.
    """
    max_order = max((len(u) for u in report.gsi), default=0)
    eps = _check_thresholds(eps, max(max_order, 1))
    kept = [u for u in report.gsi if report.gsi[u] > eps[len(u) - 1]]
    added = []
    if closure:
        have = set(kept) | {()}
        for u in kept:
            for r in range(1, len(u)):
                for v in itertools.combinations(u, r):
                    if v not in have:
                        have.add(v)
                        added.append(v)
    order = list(report.term_variances)
    rank = {u: i for i, u in enumerate(order)}
    terms = sorted(set(kept) | set(added), key=lambda u: (len(u), rank.get(u, len(rank)), u))
    active = AnovaTermSet(report.d, ((),) + tuple(terms), tuple(sorted(added, key=lambda u: (len(u), u))))
    report.detected_active_set = active
    report.thresholds = eps
    return active


def superposition_dimension(report: SensitivityReport, delta=1.0) -> int:
    """Smallest order ``s`` whose terms of order <= s carry ``delta`` of the variance.

    A relative slack of 1e-12 absorbs rounding when ``delta = 1``.
    """
    if not 0.0 <= delta <= 1.0:
        raise InvalidThresholdError(f"delta must lie in [0, 1], got {delta}")
    total = report.total_variance
    if not total > 0.0:
        raise DegenerateModelError("model has zero variance")
    by_order: Dict[int, float] = {}
    for u, v in report.term_variances.items():
        if u:
            by_order[len(u)] = by_order.get(len(u), 0.0) + v
    acc = 0.0
    for s in range(1, max(by_order, default=1) + 1):
        acc += by_order.get(s, 0.0)
        if acc >= delta * total * (1.0 - 1e-12):
            return s
    return max(by_order, default=1)
