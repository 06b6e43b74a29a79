"""Retrieval metrics and the two attribute-prediction evaluations.

APE ranks attributes for entities (attention over the entity's class-paths)
and reports Hits@k; APC ranks attributes for single class-paths and reports
mean P@k.
"""

from dataclasses import asdict, dataclass, field
import json

import numpy as np

from .kb import extract_class_paths
from .model import rank_attributes_for_entity, rank_attributes_for_path

DEFAULT_KS = (1, 5, 10, 15, 20)
OVERALL = "Overall"


def precision_at_k(ranked, relevant, k):
    """Share of the top-``k`` that is relevant; the denominator is always ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    return sum(1 for a in list(ranked)[:k] if a in relevant) / k


def mean_precision_at_k(results, k):
    """Mean of P@k over ``(ranked, relevant)`` query results."""
    results = list(results)
    if not results:
        raise ValueError("mean P@k needs at least one query")
    return sum(precision_at_k(r, rel, k) for r, rel in results) / len(results)


def hits_at_k(results, k):
    """Fraction of queries with at least one relevant attribute in the top ``k``."""
    results = list(results)
    if not results:
        raise ValueError("Hits@k needs at least one query")
    hit = sum(1 for r, rel in results if set(list(r)[:k]) & set(rel))
    return hit / len(results)


@dataclass
class RankedResult:
    query: str
    attributes: list
    scores: list
    category: str
    attention: np.ndarray = None
    paths: list = None


@dataclass
class EvalReport:
    task: str
    metric: str
    ks: list
    overall: dict
    by_category: dict
    counts: dict
    truth_source: str = "planted"
    skipped: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    @property
    def q(self):
        return self.counts[OVERALL]

    def to_dict(self):
        d = asdict(self)
        d["overall"] = {str(k): v for k, v in self.overall.items()}
        d["by_category"] = {c: {str(k): v for k, v in m.items()} for c, m in self.by_category.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        """Aligned plain-text table: one row per k, one column per category, in percent."""
        cats = sorted(self.by_category) + [OVERALL]
        head = [f"{self.metric}@k"] + cats
        sub = [""] + [f"({self.counts[c]})" for c in cats]
        rows = []
        for k in self.ks:
            vals = [self.by_category[c][k] for c in cats[:-1]] + [self.overall[k]]
            rows.append([f"{self.metric}@{k}"] + [f"{100 * v:.2f}" for v in vals])
        widths = [max(len(r[i]) for r in [head, sub] + rows) for i in range(len(head))]
        fmt = lambda r: "  ".join(x.rjust(w) if i else x.ljust(w) for i, (x, w) in enumerate(zip(r, widths)))  # noqa: E731
        lines = [f"{self.task} ({self.truth_source} truth)", fmt(head), fmt(sub)]
        lines.append("-" * len(lines[-1]))
        lines += [fmt(r) for r in rows]
        return "\n".join(lines)


def _aggregate(task, metric, fn, results, relevant, ks, **extra):
    cats = sorted({r.category for r in results})
    by_cat, counts = {}, {OVERALL: len(results)}
    overall = {k: fn([(r.attributes, relevant[r.query]) for r in results], k) for k in ks}
    for c in cats:
        sub = [r for r in results if r.category == c]
        counts[c] = len(sub)
        by_cat[c] = {k: fn([(r.attributes, relevant[r.query]) for r in sub], k) for k in ks}
    return EvalReport(task, metric, list(ks), overall, by_cat, counts, **extra)


def _rank_entity(model, ps, k, common):
    if hasattr(model, "rank_entity"):
        return model.rank_entity(ps, k, common)
    return rank_attributes_for_entity(ps, model, k, common)


def _rank_path(model, path, k):
    if hasattr(model, "rank_path"):
        return model.rank_path(path, k)
    return rank_attributes_for_path(path, model, k)


def run_ape(model, kb, ks=DEFAULT_KS, common_attr_filter=(), entities=None, truth_source="planted"):
    """Hits@k of entity attribute prediction against ``kb``'s entity attributes."""
    ks = sorted(set(ks))
    entities = sorted(kb.entities if entities is None else entities)
    relevant, results, skipped = {}, [], []
    for e in entities:
        ps = extract_class_paths(kb, e)
        if ps.is_empty:
            skipped.append(e)
            continue
        ranked, att = _rank_entity(model, ps, max(ks), common_attr_filter)
        results.append(RankedResult(e, [a for a, _ in ranked], [s for _, s in ranked],
                                    ps.paths[0].root, att, list(ps.paths)))
        relevant[e] = kb.entity_attributes.get(e, frozenset())
    if not results:
        raise ValueError("APE has no entity with a class-path to evaluate")
    return _aggregate("APE", "Hits", hits_at_k, results, relevant, ks,
                      truth_source=truth_source, skipped=skipped)


def run_apc(model, paths, ground_truth, ks=DEFAULT_KS, truth_source="planted"):
    """Mean P@k of single-path attribute prediction against planted path attributes.

    ``ground_truth`` maps each class-path to its attribute set.  Paths whose
    every class word is outside the model vocabulary are still scored and
    listed in ``flagged``.
    """
    ks = sorted(set(ks))
    paths = list(paths)
    if not paths:
        raise ValueError("APC needs at least one class-path")
    vocab = getattr(getattr(getattr(model, "encoder", None), "table", None), "vocab", None)
    relevant, results, flagged = {}, [], []
    for p in paths:
        ranked = _rank_path(model, p, max(ks))
        key = str(p)
        results.append(RankedResult(key, [a for a, _ in ranked], [s for _, s in ranked], p.root))
        relevant[key] = ground_truth.get(p, frozenset())
        if vocab is not None and not any(w in vocab for w in p):
            flagged.append(key)
    return _aggregate("APC", "P", mean_precision_at_k, results, relevant, ks,
                      truth_source=truth_source, flagged=flagged)


class OracleRanker:
    """Ranks by planted path attributes instead of a learned model.

    Planted attributes score 0 and everything else 1, ties by attribute index.
    For entities an attribute scores 0 if any path carries it, and attention is
    one-hot on the first such path (uniform when none does).
    """

    def __init__(self, attributes, path_attributes):
        self.attributes = sorted(attributes)
        self.path_attributes = path_attributes

    def rank_path(self, path, k):
        have = self.path_attributes.get(path, frozenset())
        scores = [0.0 if a in have else 1.0 for a in self.attributes]
        order = sorted(range(len(scores)), key=lambda j: (scores[j], j))
        return [(self.attributes[j], scores[j]) for j in order[:k]]

    def rank_entity(self, path_set, k, common_attr_filter=()):
        paths = list(path_set)
        banned = set(common_attr_filter)
        cand = [j for j, a in enumerate(self.attributes) if a not in banned]
        if not cand:
            raise ValueError("no candidate attributes left after filtering")
        rows = {}
        for j in cand:
            a = self.attributes[j]
            owners = [i for i, p in enumerate(paths) if a in self.path_attributes.get(p, ())]
            alpha = np.full(len(paths), 1.0 / len(paths))
            if owners:
                alpha = np.zeros(len(paths))
                alpha[owners[0]] = 1.0
            rows[j] = (0.0 if owners else 1.0, alpha)
        cand.sort(key=lambda j: (rows[j][0], j))
        top = cand[:k]
        return [(self.attributes[j], rows[j][0]) for j in top], np.array([rows[j][1] for j in top])


def read_common_attrs(path):
    with open(path, encoding="utf-8") as fh:
        return [x.strip() for x in fh if x.strip() and not x.startswith("#")]
