"""Knowledge-base subset, class-path extraction and training-tuple construction."""

from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
import logging
from pathlib import Path

log = logging.getLogger(__name__)

MAX_PATH_LENGTH = 16


class KbError(ValueError):
    """Raised for malformed knowledge-base input."""


class EmptyDatasetError(KbError):
    pass


@dataclass(frozen=True, order=True)
class ClassPath:
    """Root-first sequence of class ids."""

    classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise KbError("a class-path needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise KbError(f"class repeats within path {self}")

    @property
    def n(self):
        return len(self.classes)

    @property
    def root(self):
        return self.classes[0]

    @property
    def terminal(self):
        return self.classes[-1]

    def __len__(self):
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def __str__(self):
        return "/".join(self.classes)

    @classmethod
    def parse(cls, text):
        """Parse ``a/b/c`` (a leading slash is accepted)."""
        parts = [p for p in text.strip().split("/") if p]
        return cls(tuple(parts))


@dataclass(frozen=True)
class PathSet:
    entity: str
    paths: tuple

    @property
    def is_empty(self):
        return not self.paths

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


@dataclass(frozen=True)
class TrainingTuple:
    path_set: PathSet
    attribute: str

    @property
    def entity(self):
        return self.path_set.entity


@dataclass(frozen=True)
class KbSubset:
    """Entities, classes and attributes with their hypernym and attribute relations.

    ``r1_class_edges`` holds ``(hyponym, hypernym)`` class pairs and
    ``r1_entity_edges`` holds ``(class, entity)`` pairs; together they form the
    hypernym-hyponym relation.  ``r3`` (planted path-attribute truth) is only
    populated for synthetic data.
    """

    entities: frozenset
    classes: frozenset
    attributes: frozenset
    r1_class_edges: frozenset
    r1_entity_edges: frozenset
    r2: frozenset
    r3: frozenset = frozenset()
    max_path_length: int = field(default=MAX_PATH_LENGTH, compare=False)

    def __post_init__(self):
        for name in ("entities", "classes", "attributes", "r1_class_edges", "r1_entity_edges", "r2", "r3"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))

    @classmethod
    def from_relations(cls, class_edges=(), entity_classes=(), entity_attrs=(), r3=(), **kw):
        """Build a subset whose id sets are inferred from the relations."""
        class_edges = set(class_edges)
        entity_classes = set(entity_classes)  # (entity, class)
        entity_attrs = set(entity_attrs)
        classes = {c for e in class_edges for c in e} | {c for _, c in entity_classes}
        classes |= {c for p, _ in r3 for c in p.classes}
        entities = {e for e, _ in entity_classes} | {e for e, _ in entity_attrs}
        attributes = {a for _, a in entity_attrs} | {a for _, a in r3}
        return cls(
            entities=entities,
            classes=classes,
            attributes=attributes,
            r1_class_edges=class_edges,
            r1_entity_edges={(c, e) for e, c in entity_classes},
            r2=entity_attrs,
            r3=set(r3),
            **kw,
        )

    # -- indexes (the subset is immutable, so these are computed once) ----
    @cached_property
    def hypernyms(self):
        out = defaultdict(set)
        for hypo, hyper in self.r1_class_edges:
            out[hypo].add(hyper)
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @cached_property
    def hyponyms(self):
        out = defaultdict(set)
        for hypo, hyper in self.r1_class_edges:
            out[hyper].add(hypo)
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @cached_property
    def roots(self):
        return frozenset(c for c in self.classes if c not in self.hypernyms)

    @cached_property
    def entity_classes(self):
        out = defaultdict(set)
        for c, e in self.r1_entity_edges:
            out[e].add(c)
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @cached_property
    def entity_attributes(self):
        out = defaultdict(set)
        for e, a in self.r2:
            out[e].add(a)
        return {k: frozenset(v) for k, v in out.items()}

    @cached_property
    def path_attributes(self):
        out = defaultdict(set)
        for p, a in self.r3:
            out[p].add(a)
        return {k: frozenset(v) for k, v in out.items()}

    @cached_property
    def _paths_to(self):
        return {}

    def paths_to_class(self, cls_id):
        """All root-first walks ending at ``cls_id``, sorted lexicographically."""
        memo = self._paths_to
        if cls_id in memo:
            return memo[cls_id]
        stack = [(cls_id, (cls_id,))]
        found = []
        while stack:
            node, suffix = stack.pop()
            parents = self.hypernyms.get(node, ())
            if not parents:
                found.append(ClassPath(suffix))
                continue
            if len(suffix) >= self.max_path_length:
                raise KbError(f"class-path through {node!r} exceeds max length {self.max_path_length}")
            for p in parents:
                if p in suffix:
                    raise KbError(f"cycle through class {p!r}")
                stack.append((p, (p,) + suffix))
        memo[cls_id] = tuple(sorted(found, key=lambda cp: cp.classes))
        return memo[cls_id]

    def restrict_entities(self, keep):
        """Sub-KB with only the given entities (taxonomy and R3 kept whole)."""
        keep = frozenset(keep)
        return KbSubset(
            entities=self.entities & keep,
            classes=self.classes,
            attributes=self.attributes,
            r1_class_edges=self.r1_class_edges,
            r1_entity_edges={(c, e) for c, e in self.r1_entity_edges if e in keep},
            r2={(e, a) for e, a in self.r2 if e in keep},
            r3=self.r3,
            max_path_length=self.max_path_length,
        )


def _find_cycle(kb):
    """Return one cycle (list of classes) in the class graph, or None."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(kb.classes, WHITE)
    for hypo, hyper in kb.r1_class_edges:
        color.setdefault(hypo, WHITE)
        color.setdefault(hyper, WHITE)
    for start in sorted(color):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(kb.hypernyms.get(start, ())))]
        trail = [start]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
                trail.pop()
            elif color[nxt] == GREY:
                return trail[trail.index(nxt):]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                trail.append(nxt)
                stack.append((nxt, iter(kb.hypernyms.get(nxt, ()))))
    return None


def _longest_path(kb):
    depth = {}

    def visit(c):
        # iterative post-order over hypernyms
        todo = [c]
        while todo:
            node = todo[-1]
            if node in depth:
                todo.pop()
                continue
            pending = [p for p in kb.hypernyms.get(node, ()) if p not in depth]
            if pending:
                todo.extend(pending)
            else:
                depth[node] = 1 + max((depth[p] for p in kb.hypernyms.get(node, ())), default=0)
                todo.pop()

    for c in sorted(kb.classes):
        visit(c)
    return max(depth.values(), default=0), depth


def validate_kb(kb):
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    for hypo, hyper in sorted(kb.r1_class_edges):
        if hypo == hyper:
            problems.append(f"self-loop class edge ({hypo}, {hyper})")
        for c in (hypo, hyper):
            if c not in kb.classes:
                problems.append(f"class edge ({hypo}, {hyper}) references unknown class {c!r}")
    for c, e in sorted(kb.r1_entity_edges):
        if c not in kb.classes:
            problems.append(f"entity edge ({c}, {e}) references unknown class {c!r}")
        if e not in kb.entities:
            problems.append(f"entity edge ({c}, {e}) references unknown entity {e!r}")
    for e, a in sorted(kb.r2):
        if e not in kb.entities:
            problems.append(f"attribute pair ({e}, {a}) references unknown entity {e!r}")
        if a not in kb.attributes:
            problems.append(f"attribute pair ({e}, {a}) references unknown attribute {a!r}")
    for p, a in sorted(kb.r3):
        if a not in kb.attributes:
            problems.append(f"path-attribute pair ({p}, {a}) references unknown attribute {a!r}")
        for c in p.classes:
            if c not in kb.classes:
                problems.append(f"path-attribute pair ({p}, {a}) references unknown class {c!r}")
    cycle = _find_cycle(kb)
    if cycle:
        problems.append("cycle in class edges: " + " -> ".join(cycle))
    else:
        longest, _ = _longest_path(kb)
        if longest > kb.max_path_length:
            problems.append(f"longest class-path has {longest} classes, above the cap of {kb.max_path_length}")
    return problems


def check_kb(kb):
    problems = validate_kb(kb)
    if problems:
        raise KbError("invalid knowledge base:\n  " + "\n  ".join(problems))


def extract_class_paths(kb, entity):
    """Every root-to-direct-class walk for ``entity`` in lexicographic order.

    An entity without classes gives an empty :class:`PathSet` (``is_empty``).
    """
    if entity not in kb.entities:
        raise KeyError(f"unknown entity {entity!r}")
    paths = set()
    for c in kb.entity_classes.get(entity, ()):
        paths.update(kb.paths_to_class(c))
    return PathSet(entity, tuple(sorted(paths, key=lambda cp: cp.classes)))


def build_dataset(kb, min_attr_support=20):
    """Training tuples ``(P_e, a)`` and the retained attribute set.

    Entities without attributes are dropped first, then attributes held by
    fewer than ``min_attr_support`` distinct entities.  Entities are not
    re-filtered after attribute pruning.
    """
    if min_attr_support < 1:
        raise ValueError("min_attr_support must be >= 1")
    check_kb(kb)
    attrs_of = {e: a for e, a in kb.entity_attributes.items() if a}
    support = defaultdict(int)
    for e, attrs in attrs_of.items():
        for a in attrs:
            support[a] += 1
    kept = frozenset(a for a, n in support.items() if n >= min_attr_support)
    tuples = []
    for e in sorted(attrs_of):
        ps = extract_class_paths(kb, e)
        if ps.is_empty:
            log.debug("entity %s has no class-path; skipped", e)
            continue
        for a in sorted(attrs_of[e] & kept):
            tuples.append(TrainingTuple(ps, a))
    if not tuples:
        raise EmptyDatasetError(
            f"no training tuples survive filtering (min_attr_support={min_attr_support})"
        )
    return tuples, kept


# -- TSV interchange ------------------------------------------------------

def _read_pairs(path):
    pairs = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise KbError(f"{path}:{lineno}: expected two tab-separated fields")
            pairs.add((cols[0], cols[1]))
    return pairs


def _write_pairs(path, pairs, header):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {header}\n")
        for a, b in sorted(pairs):
            fh.write(f"{a}\t{b}\n")


TAXONOMY_FILE = "taxonomy.tsv"
ENTITY_CLASS_FILE = "entity_class.tsv"
ENTITY_ATTR_FILE = "entity_attr.tsv"
R3_FILE = "ground_truth_r3.tsv"


def load_kb(directory, max_path_length=MAX_PATH_LENGTH):
    d = Path(directory)
    class_edges = _read_pairs(d / TAXONOMY_FILE)
    entity_classes = _read_pairs(d / ENTITY_CLASS_FILE)
    entity_attrs = _read_pairs(d / ENTITY_ATTR_FILE) if (d / ENTITY_ATTR_FILE).exists() else set()
    r3 = set()
    if (d / R3_FILE).exists():
        r3 = {(ClassPath.parse(p), a) for p, a in _read_pairs(d / R3_FILE)}
    return KbSubset.from_relations(class_edges, entity_classes, entity_attrs, r3,
                                   max_path_length=max_path_length)


def save_kb(kb, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_pairs(d / TAXONOMY_FILE, kb.r1_class_edges, "hyponym-class\thypernym-class")
    _write_pairs(d / ENTITY_CLASS_FILE, {(e, c) for c, e in kb.r1_entity_edges}, "entity\tclass")
    _write_pairs(d / ENTITY_ATTR_FILE, kb.r2, "entity\tattribute")
    if kb.r3:
        _write_pairs(d / R3_FILE, {(str(p), a) for p, a in kb.r3}, "class-path\tattribute")
