"""Two-stage approximation: fit on all low-order terms, rank terms, refit on the active set."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from anovacheb.anova import detect_active_set, global_sensitivity_indices
from anovacheb.core import (
    DEFAULT_MAX_COEFFICIENTS,
    AnovaTermSet,
    CoefficientVector,
    Dataset,
    Density,
    GroupedIndexSet,
    NodeSet,
    build_superposition_term_set,
)
from anovacheb.errors import FormatError, ShapeError, UsageError, VersionError
from anovacheb.solver import DEFAULT_THETA, LsqrConfig, solve_chebyshev_nodes, solve_uniform_nodes
from anovacheb.transform import AUTO, GroupedTransform

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ApproximationModel:
    """Fitted partial sum ``sum_k c_k T_k`` over a grouped index set.

    Models fitted on uniform nodes store the padding ``theta``; evaluation
    applies the same ``1 - theta`` shrink to the query points.
    """

    coefficients: CoefficientVector
    density: Density = Density.CHEBYSHEV
    theta: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def index_set(self) -> GroupedIndexSet:
        return self.coefficients.index_set

    @property
    def d(self) -> int:
        return self.index_set.d

    @property
    def terms(self):
        return self.index_set.terms

    def evaluate(self, points, threads=None) -> np.ndarray:
        return evaluate(self, points, threads=threads)


def _points_array(points, d):
    x = points.nodes if isinstance(points, NodeSet) else np.asarray(points, dtype=np.float64)
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ShapeError(f"points have dimension {x.shape[1]}, model has d={d}")
    return NodeSet(x).nodes


def evaluate(model: ApproximationModel, points, threads=None, mode=AUTO) -> np.ndarray:
    x = _points_array(points, model.d)
    if model.theta is not None:
        x = (1.0 - model.theta) * x
    return GroupedTransform(x, model.index_set, mode=mode, threads=threads).apply(model.coefficients.values)


def _fit(data: Dataset, index_set: GroupedIndexSet, cfg, theta, threads, mode, max_coefficients, stage,
         weighted=True):
    index_set.check_size(max_coefficients)
    X = data.nodes
    if X.density == Density.CHEBYSHEV:
        coeffs, res = solve_chebyshev_nodes(X, data.values, index_set, cfg, threads, mode, return_info=True)
        used_theta = None
    else:
        coeffs, res = solve_uniform_nodes(X, data.values, index_set, theta, cfg, threads, mode, return_info=True,
                                          weighted=weighted)
        used_theta = res.info["theta"]
    meta = {
        "stage": stage,
        "M": data.M,
        "cardinality": index_set.cardinality(),
        "iterations": res.iterations,
        "converged": res.converged,
        "stopReason": res.stop_reason,
        "residualNorm": res.info["residual_norm"],
        "trainError": res.info["residual_norm"] / float(np.linalg.norm(data.values))
        if np.any(data.values) else 0.0,
        "underdetermined": res.info["underdetermined"],
        "stableRegime": res.info["stable_regime"],
    }
    if "weighted" in res.info:
        meta["weighted"] = res.info["weighted"]
    if "weighted_residual_norm" in res.info:
        meta["weightedResidualNorm"] = res.info["weighted_residual_norm"]
    return ApproximationModel(coeffs, X.density, used_theta, meta)


def fit_initial(data: Dataset, ds: int, n_by_order: Sequence[int], cfg: LsqrConfig = LsqrConfig(),
                theta=DEFAULT_THETA, threads=None, mode=AUTO,
                max_coefficients=DEFAULT_MAX_COEFFICIENTS, weighted=True) -> ApproximationModel:
    """Fit on every term of order <= ``ds`` with bandlimits ``n_by_order[|u| - 1]``.

    ``weighted`` only matters for uniform nodes (see :func:`solve_uniform_nodes`).
    """
    if ds < 1:
        raise UsageError(f"superposition threshold must be >= 1, got {ds}")
    n_by_order = [int(n) for n in n_by_order]
    if len(n_by_order) != ds or any(n < 2 for n in n_by_order):
        raise UsageError(f"need {ds} bandlimits >= 2, got {n_by_order}")
    terms = build_superposition_term_set(data.d, ds)
    index_set = GroupedIndexSet.with_order_bandlimits(terms, n_by_order)
    model = _fit(data, index_set, cfg, theta, threads, mode, max_coefficients, "initial", weighted)
    model.metadata.update({"ds": ds, "N": n_by_order})
    return model


def refit(data: Dataset, active: AnovaTermSet, bandlimits, cfg: LsqrConfig = LsqrConfig(),
          theta=DEFAULT_THETA, initial: Optional[ApproximationModel] = None, threads=None, mode=AUTO,
          max_coefficients=DEFAULT_MAX_COEFFICIENTS, weighted=True) -> ApproximationModel:
    """Fit on a reduced term set.

    ``bandlimits`` is either a per-order sequence or a mapping term -> N_u
    (terms missing from the mapping fall back to ``bandlimits.get(|u|)`` when
    integer order keys are present).  With ``initial`` the active set must be
    a subset of the initial model's terms.
    """
    if initial is not None:
        missing = [u for u in active if u not in initial.index_set.term_set]
        if missing:
            raise UsageError(f"active set contains terms not in the initial fit: {missing}")
    if isinstance(bandlimits, Mapping):
        bl = {}
        for u in active:
            if not u:
                continue
            n = bandlimits.get(u, bandlimits.get(len(u)))
            if n is None:
                raise UsageError(f"no bandlimit for term {u}")
            bl[u] = int(n)
        index_set = GroupedIndexSet(active, bl)
    else:
        index_set = GroupedIndexSet.with_order_bandlimits(active, list(bandlimits))
    model = _fit(data, index_set, cfg, theta, threads, mode, max_coefficients, "refit", weighted)
    if initial is not None:
        model.metadata["initial"] = {k: v for k, v in initial.metadata.items() if k != "initial"}
    return model


def two_stage(data: Dataset, ds, n_initial, eps, n_refit, cfg: LsqrConfig = LsqrConfig(),
              theta=DEFAULT_THETA, closure=True, threads=None, weighted=True):
    """Initial fit, sensitivity report, active set, refit.  Returns ``(initial, report, final)``."""
    initial = fit_initial(data, ds, n_initial, cfg, theta, threads, weighted=weighted)
    report = global_sensitivity_indices(initial.coefficients)
    active = detect_active_set(report, eps, closure=closure)
    final = refit(data, active, n_refit, cfg, theta, initial=initial, threads=threads, weighted=weighted)
    return initial, report, final


# ----------------------------------------------------------------------------
# persistence


def model_to_dict(model: ApproximationModel) -> dict:
    idx = model.index_set
    return {
        "formatVersion": FORMAT_VERSION,
        "d": idx.d,
        "density": model.density.value,
        "theta": model.theta,
        "terms": [
            {"u": list(u), "N_u": idx.bandlimits[u], "coefficients": model.coefficients.values[idx.block_slice(u)].tolist()}
            for u in idx.terms
        ],
        "closureAdded": [list(u) for u in idx.term_set.closure_added],
        "metadata": model.metadata,
    }


def model_from_dict(doc) -> ApproximationModel:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    if "formatVersion" not in doc:
        raise FormatError("model document has no formatVersion field")
    if doc["formatVersion"] != FORMAT_VERSION:
        raise VersionError(f"model format version {doc['formatVersion']!r} is not supported (expected {FORMAT_VERSION})")
    try:
        d = int(doc["d"])
        terms, bl, values = [], {}, []
        for pos, t in enumerate(doc["terms"]):
            u = tuple(int(s) for s in t["u"])
            terms.append(u)
            if u:
                bl[u] = int(t["N_u"])
            coeffs = t["coefficients"]
            if not isinstance(coeffs, list):
                raise FormatError(f"terms[{pos}].coefficients must be a list")
            values.extend(float(c) for c in coeffs)
        term_set = AnovaTermSet(d, tuple(terms), tuple(tuple(u) for u in doc.get("closureAdded", [])))
        index_set = GroupedIndexSet(term_set, bl)
        coeffs = CoefficientVector(index_set, np.array(values, dtype=np.float64))
        density = Density.parse(doc["density"])
        theta = doc.get("theta")
        return ApproximationModel(coeffs, density, None if theta is None else float(theta), dict(doc.get("metadata", {})))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model document: {exc!r}") from exc


def save_model(model: ApproximationModel, sink) -> None:
    text = json.dumps(model_to_dict(model), indent=1)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sink.write(text)


def load_model(source) -> ApproximationModel:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from exc
    return model_from_dict(doc)
