"""Distances, fidelity, and structure-accuracy scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, StructuralError
from .models import DistributionTable, TwoHopGraph


def lp_distance(a: DistributionTable, b: DistributionTable, p: float) -> float:
    """Entrywise p-norm between two tables; p = inf gives the max-norm."""
    if a.n != b.n:
        raise StructuralError(f"table sizes differ: {a.n} vs {b.n}")
    if p < 1.0:
        raise DomainError("p must be >= 1")
    diff = np.abs(a.probs - b.probs)
    if math.isinf(p):
        return float(diff.max())
    return float((diff ** p).sum() ** (1.0 / p))


def bhattacharyya_overlap(a: DistributionTable, b: DistributionTable) -> float:
    """sum_x sqrt(a(x) b(x)); the inner product of the amplitude vectors."""
    if a.n != b.n:
        raise StructuralError(f"table sizes differ: {a.n} vs {b.n}")
    return float(np.sqrt(a.probs * b.probs).sum())


def fidelity(a: DistributionTable, b: DistributionTable) -> float:
    """Squared amplitude overlap (sum_x sqrt(a b))^2, clipped into [0, 1].

    For states with real non-negative amplitudes sqrt(p(x)) this equals
    the squared inner product of the two state vectors, and equals 1
    exactly when the tables coincide.
    """
    return float(min(1.0, bhattacharyya_overlap(a, b) ** 2))


@dataclass(frozen=True)
class StructureScore:
    exact_match: bool
    precision: float
    recall: float


def structure_score(learned: TwoHopGraph, truth: TwoHopGraph) -> StructureScore:
    """Edge-set comparison; an empty prediction scores precision 1."""
    if learned.n != truth.n:
        raise StructuralError(f"graph sizes differ: {learned.n} vs {truth.n}")
    le, te = learned.edges(), truth.edges()
    hits = len(le & te)
    precision = hits / len(le) if le else 1.0
    recall = hits / len(te) if te else 1.0
    return StructureScore(exact_match=le == te, precision=precision, recall=recall)


@dataclass(frozen=True)
class EvalReport:
    """Distances and fidelity of a pair of tables, plus optional structure
    scores when graphs are supplied."""

    l1: float
    lp: float
    linf: float
    p_norm: float
    fidelity: float
    overlap: float
    structure_exact_match: Optional[bool] = None
    edge_precision: Optional[float] = None
    edge_recall: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {
            "l1": self.l1,
            "lp": self.lp,
            "linf": self.linf,
            "p_norm": self.p_norm,
            "fidelity": self.fidelity,
            "overlap": self.overlap,
            "structure_exact_match": self.structure_exact_match,
            "edge_precision": self.edge_precision,
            "edge_recall": self.edge_recall,
        }


def evaluate_tables(a: DistributionTable, b: DistributionTable,
                    p_norm: float = 2.0,
                    learned: Optional[TwoHopGraph] = None,
                    truth: Optional[TwoHopGraph] = None) -> EvalReport:
    """Full report for a learned table vs a reference table."""
    score = None
    if learned is not None and truth is not None:
        score = structure_score(learned, truth)
    return EvalReport(
        l1=lp_distance(a, b, 1.0),
        lp=lp_distance(a, b, p_norm),
        linf=lp_distance(a, b, math.inf),
        p_norm=p_norm,
        fidelity=fidelity(a, b),
        overlap=bhattacharyya_overlap(a, b),
        structure_exact_match=None if score is None else score.exact_match,
        edge_precision=None if score is None else score.precision,
        edge_recall=None if score is None else score.recall,
    )


def save_eval_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh)
        fh.write("\n")
