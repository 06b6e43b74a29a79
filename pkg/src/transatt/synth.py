"""Synthetic knowledge bases with planted class-path attributes.

A forest taxonomy is grown from a handful of roots.  Each root owns a thematic
pool of attributes; leaf paths draw their planted attributes from their root's
pool, with a block shared by all leaf children of the same parent and a
sibling-disjoint remainder.  Entities hang off one or more leaves and observe
the union of their paths' attributes, which hides which path licensed which
attribute.
"""

from dataclasses import asdict, dataclass, field
import json
from pathlib import Path

from .kb import ClassPath, KbSubset, check_kb, load_kb, save_kb
from .numerics import Rng

SPLIT_FILE = "split.tsv"
HOLDOUT_FILE = "holdout_paths.txt"
MANIFEST_FILE = "manifest.json"


@dataclass
class SynthConfig:
    num_root_classes: int = 4
    branching: tuple = (2, 5)
    depth: tuple = (2, 4)
    num_attributes: int = 50
    attrs_per_path: tuple = (6, 10)
    num_entities: int = 1000
    paths_per_entity_mean: float = 2.0
    max_paths_per_entity: int = 4
    attr_overlap_fraction: float = 0.8
    holdout_path_fraction: float = 0.1
    test_entity_fraction: float = 0.15
    seed: int = 42

    def __post_init__(self):
        self.branching = tuple(self.branching)
        self.depth = tuple(self.depth)
        self.attrs_per_path = tuple(self.attrs_per_path)

    def validate(self):
        for name in ("num_root_classes", "num_attributes", "num_entities", "max_paths_per_entity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name, (lo, hi) in (("branching", self.branching), ("depth", self.depth),
                               ("attrs_per_path", self.attrs_per_path)):
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} range {lo, hi} must satisfy 1 <= lo <= hi")
        if not (2 <= self.depth[0] and self.depth[1] <= 8):
            raise ValueError("depth range must lie within [2, 8]")
        if self.attrs_per_path[1] > self.num_attributes:
            raise ValueError("attrs_per_path cannot exceed num_attributes")
        if not 1.0 <= self.paths_per_entity_mean <= self.max_paths_per_entity:
            raise ValueError("paths_per_entity_mean must lie in [1, max_paths_per_entity]")
        for name in ("attr_overlap_fraction", "holdout_path_fraction", "test_entity_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        return self


@dataclass
class SynthData:
    kb: KbSubset
    train_entities: list
    test_entities: list
    holdout_paths: list
    config: SynthConfig = field(default_factory=SynthConfig)

    @property
    def train_kb(self):
        return self.kb.restrict_entities(self.train_entities)

    @property
    def test_kb(self):
        return self.kb.restrict_entities(self.test_entities)


def _draw(rng, lohi):
    lo, hi = lohi
    return lo + rng.integer(hi - lo + 1)


def _sample(rng, items, n):
    items = list(items)
    rng.shuffle(items)
    return items[:n]


def truncated_geometric_p(mean, kmax):
    """Success probability giving a geometric on {1..kmax} the requested mean."""
    if mean <= 1.0:
        return 1.0

    def m(p):
        w = [(1 - p) ** (k - 1) * p for k in range(1, kmax + 1)]
        return sum(k * x for k, x in zip(range(1, kmax + 1), w)) / sum(w)

    lo, hi = 1e-9, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if m(mid) > mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def truncated_geometric_cdf(p, kmax):
    w = [(1 - p) ** (k - 1) * p for k in range(1, kmax + 1)]
    total = sum(w)
    acc, out = 0.0, []
    for x in w:
        acc += x / total
        out.append(acc)
    out[-1] = 1.0
    return out


def _draw_count(rng, cdf):
    u = rng.random()
    for k, c in enumerate(cdf, 1):
        if u < c:
            return k
    return len(cdf)


def _grow_forest(cfg, rng):
    edges = []
    leaves = []
    stack = [(f"r{i}", 1) for i in reversed(range(cfg.num_root_classes))]
    dmin, dmax = cfg.depth
    while stack:
        node, d = stack.pop()
        if d >= dmax or (d >= dmin and rng.random() < 0.5):
            leaves.append(node)
            continue
        kids = [f"{node}.{j}" for j in range(_draw(rng, cfg.branching))]
        edges.extend((k, node) for k in kids)
        stack.extend((k, d + 1) for k in reversed(kids))
    return edges, leaves


def generate(cfg=None):
    """Build a synthetic KB with planted R3, an entity split and held-out paths."""
    cfg = (cfg or SynthConfig()).validate()
    rng = Rng(cfg.seed)
    edges, leaves = _grow_forest(cfg, rng)
    parent = {hypo: hyper for hypo, hyper in edges}

    def path_of(c):
        out = [c]
        while out[-1] in parent:
            out.append(parent[out[-1]])
        return ClassPath(tuple(reversed(out)))

    leaf_paths = {leaf: path_of(leaf) for leaf in leaves}

    # thematic attribute pools: contiguous blocks, one per root
    names = [f"a{j:02d}" for j in range(cfg.num_attributes)]
    R = cfg.num_root_classes
    pools = {f"r{i}": names[i * len(names) // R:(i + 1) * len(names) // R] or names for i in range(R)}

    by_parent = {}
    for leaf in leaves:
        by_parent.setdefault(parent.get(leaf, leaf), []).append(leaf)

    planted = {}
    for par in sorted(by_parent):
        kids = by_parent[par]
        pool = pools[leaf_paths[kids[0]].root]
        n_shared = round(cfg.attr_overlap_fraction * _draw(rng, cfg.attrs_per_path))
        shared = _sample(rng, pool, n_shared)
        if len(shared) < n_shared:
            shared += _sample(rng, [a for a in names if a not in shared], n_shared - len(shared))
        used = set(shared)
        for leaf in kids:
            n_spec = max(0, _draw(rng, cfg.attrs_per_path) - n_shared)
            spec = _sample(rng, [a for a in pool if a not in used], n_spec)
            if len(spec) < n_spec:
                spec += _sample(rng, [a for a in names if a not in used and a not in spec], n_spec - len(spec))
            if len(spec) < n_spec:
                raise ValueError(
                    f"infeasible config: cannot give siblings under {par!r} disjoint attribute sets"
                )
            used.update(spec)
            planted[leaf] = frozenset(shared) | frozenset(spec)

    # held-out leaves keep at least one training sibling
    n_hold = round(cfg.holdout_path_fraction * len(leaves))
    remaining = {par: len(k) for par, k in by_parent.items()}
    holdout = []
    for leaf in _sample(rng, [leaf for leaf in leaves if leaf in parent], len(leaves)):
        if len(holdout) >= n_hold:
            break
        par = parent[leaf]
        if remaining[par] >= 2:
            remaining[par] -= 1
            holdout.append(leaf)
    holdout_set = set(holdout)

    kmax = min(cfg.max_paths_per_entity, len(leaves))
    cdf = truncated_geometric_cdf(truncated_geometric_p(cfg.paths_per_entity_mean, kmax), kmax)
    entity_classes, entity_attrs = set(), set()
    touches_holdout = []
    entities = []
    for i in range(cfg.num_entities):
        e = f"e{i:05d}"
        k = _draw_count(rng, cdf)
        chosen = _sample(rng, leaves, k)
        entities.append(e)
        for leaf in chosen:
            entity_classes.add((e, leaf))
            entity_attrs.update((e, a) for a in planted[leaf])
        if holdout_set.intersection(chosen):
            touches_holdout.append(e)

    r3 = {(leaf_paths[leaf], a) for leaf in leaves for a in planted[leaf]}
    kb = KbSubset.from_relations(edges, entity_classes, entity_attrs, r3)
    kb = KbSubset(entities=kb.entities, classes=kb.classes, attributes=frozenset(names),
                  r1_class_edges=kb.r1_class_edges, r1_entity_edges=kb.r1_entity_edges,
                  r2=kb.r2, r3=kb.r3)
    check_kb(kb)

    forced = set(touches_holdout)
    rest = [e for e in entities if e not in forced]
    extra = _sample(rng, rest, round(cfg.test_entity_fraction * len(rest)))
    test = sorted(forced | set(extra))
    test_set = set(test)
    train = [e for e in entities if e not in test_set]
    hold_paths = sorted(leaf_paths[leaf] for leaf in holdout)
    return SynthData(kb, train, test, hold_paths, cfg)


def export(data, directory):
    """Write the KB TSVs, split, held-out paths and a manifest; byte-stable per seed."""
    d = Path(directory)
    check_kb(data.kb)
    if not data.kb.r3:
        raise ValueError("synthetic KB has no planted path attributes")
    d.mkdir(parents=True, exist_ok=True)
    save_kb(data.kb, d)
    with open(d / SPLIT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# entity\tsplit\n")
        split = {e: "train" for e in data.train_entities}
        split.update({e: "test" for e in data.test_entities})
        for e in sorted(split):
            fh.write(f"{e}\t{split[e]}\n")
    with open(d / HOLDOUT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for p in data.holdout_paths:
            fh.write(f"{p}\n")
    manifest = {
        "generator": "transatt.synth",
        "config": asdict(data.config),
        "counts": {
            "classes": len(data.kb.classes),
            "paths": len({p for p, _ in data.kb.r3}),
            "entities": len(data.kb.entities),
            "attributes": len(data.kb.attributes),
            "train_entities": len(data.train_entities),
            "test_entities": len(data.test_entities),
            "holdout_paths": len(data.holdout_paths),
            "r2_pairs": len(data.kb.r2),
            "r3_pairs": len(data.kb.r3),
        },
    }
    with open(d / MANIFEST_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def load(directory):
    """Read a directory written by :func:`export` (split and holdouts optional)."""
    d = Path(directory)
    kb = load_kb(d)
    train, test = [], []
    if (d / SPLIT_FILE).exists():
        with open(d / SPLIT_FILE, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip() or line.startswith("#"):
                    continue
                e, s = line.rstrip("\n").split("\t")
                (test if s == "test" else train).append(e)
    else:
        train = sorted(kb.entities)
    holdout = []
    if (d / HOLDOUT_FILE).exists():
        with open(d / HOLDOUT_FILE, encoding="utf-8") as fh:
            holdout = [ClassPath.parse(x) for x in fh if x.strip() and not x.startswith("#")]
    cfg = SynthConfig()
    if (d / MANIFEST_FILE).exists():
        with open(d / MANIFEST_FILE, encoding="utf-8") as fh:
            cfg = SynthConfig(**json.load(fh)["config"])
    return SynthData(kb, sorted(train), sorted(test), holdout, cfg)
