"""Synthetic triplet datasets and the on-disk dataset format.

Each instance is (x, c, y): a feature vector, binary concept annotations,
and a category label. The generator controls how much label information
the concepts carry (``completeness``), which is the lever the routing
experiments sweep: fully concept-aligned categories next to categories
whose label is driven by a weakly-recoverable latent factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .container import (
    FormatError,
    header_int,
    read_f64_block,
    read_header,
    read_magic,
    read_u32_block,
    read_u8_block,
    write_f64_block,
    write_header,
    write_u8_block,
    write_u32_block,
)

DATASET_MAGIC = b"DECODS01"
FEATURE_NOISE_SIGMA = 0.1
# Scale of the latent-class signature embedded in x. Instance difficulty is
# heterogeneous: a minority of latent-driven instances carry a strong,
# recoverable signature, the rest almost none. The mean recoverability stays
# low so concept-poor categories are genuinely uncertain for the model,
# while model evidence still complements a noisy expert on the easy slice.
LATENT_SCALE_HIGH = 0.25
LATENT_SCALE_LOW = 0.02
LATENT_SOLVABLE_FRACTION = 0.20

GroupSpec = list[list[int]]


@dataclass
class TripletDataset:
    """N instances of features X (N,D), binary concepts C (N,d), labels Y (N,)."""

    X: np.ndarray
    C: np.ndarray
    Y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.int64)
        self.Y = np.asarray(self.Y, dtype=np.int64)
        if self.X.ndim != 2 or self.C.ndim != 2 or self.Y.ndim != 1:
            raise ValueError("X and C must be matrices, Y a vector")
        if not (self.X.shape[0] == self.C.shape[0] == self.Y.shape[0]):
            raise ValueError("X, C, Y row counts differ")
        if self.C.size and not np.isin(self.C, (0, 1)).all():
            raise ValueError("concept annotations must be binary")
        if self.Y.size and (self.Y.min() < 0 or self.Y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_concepts(self) -> int:
        return self.C.shape[1]


@dataclass
class SplitBundle:
    train: TripletDataset
    val: TripletDataset
    test: TripletDataset
    seed: int
    group_spec: GroupSpec | None = None
    templates: np.ndarray | None = None

    def __post_init__(self):
        a, b, c = self.train, self.val, self.test
        if not (a.n_features == b.n_features == c.n_features):
            raise ValueError("feature dim differs across splits")
        if not (a.n_concepts == b.n_concepts == c.n_concepts):
            raise ValueError("concept dim differs across splits")
        if not (a.n_classes == b.n_classes == c.n_classes):
            raise ValueError("class count differs across splits")

    @property
    def n_classes(self) -> int:
        return self.train.n_classes

    @property
    def n_concepts(self) -> int:
        return self.train.n_concepts

    @property
    def n_features(self) -> int:
        return self.train.n_features


@dataclass
class SyntheticConfig:
    n_classes: int = 10
    n_concepts: int = 12
    n_features: int = 24
    n_train: int = 3000
    n_val: int = 600
    n_test: int = 1500
    concept_noise: float = 0.05
    completeness: float = 1.0
    group_spec: GroupSpec | None = None
    seed: int = 7

    def __post_init__(self):
        for name in ("n_classes", "n_concepts", "n_features", "n_train", "n_val", "n_test"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("concept_noise", "completeness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.group_spec is not None:
            seen: set[int] = set()
            for group in self.group_spec:
                if len(group) < 2:
                    raise ValueError("exclusive groups need at least two members")
                for idx in group:
                    if not 0 <= idx < self.n_concepts:
                        raise ValueError(f"group index {idx} out of range")
                    if idx in seen:
                        raise ValueError(f"concept {idx} appears in two groups")
                    seen.add(idx)
        if self.completeness == 1.0 and self.n_concepts < math.ceil(math.log2(self.n_classes)):
            raise ValueError("too few concepts to separate all classes at full completeness")


def _free_indices(d: int, group_spec: GroupSpec | None) -> list[int]:
    grouped = {i for g in (group_spec or []) for i in g}
    return [i for i in range(d) if i not in grouped]


def _template_capacity(d: int, group_spec: GroupSpec | None) -> float:
    free = len(_free_indices(d, group_spec))
    cap = 2.0**free
    for g in group_spec or []:
        cap *= len(g)
    return cap


def _sample_templates(config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Seeded per-class templates with the largest achievable pairwise margin.

    Well-separated templates keep per-instance concept noise from flipping
    an instance into another class's template basin; separation degrades
    gracefully (down to plain distinctness) when the concept space is tight.
    """
    if _template_capacity(config.n_concepts, config.group_spec) < config.n_classes:
        raise ValueError("concept space too small for distinct per-class templates")
    free = _free_indices(config.n_concepts, config.group_spec)
    for min_distance in (6, 5, 4, 3, 2, 1):
        templates: list[np.ndarray] = []
        attempts = 0
        while len(templates) < config.n_classes and attempts < 400 * config.n_classes:
            attempts += 1
            t = np.zeros(config.n_concepts, dtype=np.int64)
            t[free] = rng.integers(0, 2, size=len(free))
            for g in config.group_spec or []:
                t[g[rng.integers(len(g))]] = 1
            if all(int((t != prev).sum()) >= min_distance for prev in templates):
                templates.append(t)
        if len(templates) == config.n_classes:
            return np.asarray(templates, dtype=np.int64)
    raise ValueError("failed to sample distinct class templates")


def _flip_concepts(C: np.ndarray, noise: float, group_spec: GroupSpec | None, rng: np.random.Generator) -> np.ndarray:
    out = C.copy()
    n = out.shape[0]
    free = _free_indices(out.shape[1], group_spec)
    if free:
        flips = rng.random((n, len(free))) < noise
        out[:, free] = np.where(flips, 1 - out[:, free], out[:, free])
    for g in group_spec or []:
        move = rng.random(n) < noise
        active = np.argmax(out[:, g], axis=1)
        # uniform choice among the other members keeps the group one-hot
        shift = rng.integers(1, len(g), size=n)
        new_active = (active + shift) % len(g)
        chosen = np.where(move, new_active, active)
        out[:, g] = 0
        out[np.arange(n), np.asarray(g)[chosen]] = 1
    return out


def nearest_template_labels(C: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Label each concept row by Hamming-nearest template, lowest index wins ties."""
    dists = (np.asarray(C)[:, None, :] != templates[None, :, :]).sum(axis=2)
    return np.argmin(dists, axis=1).astype(np.int64)


def per_class_completeness(n_classes: int, completeness: float) -> np.ndarray:
    """Water-filling schedule with mean exactly ``completeness``.

    Low class indices are fully concept-aligned, high indices fully
    latent-driven; at most one class is fractional. This keeps the average
    completeness at the requested value while making concept-poor regions
    identifiable from the concepts themselves.
    """
    k = np.arange(n_classes, dtype=np.float64)
    return np.clip(n_classes * completeness - k, 0.0, 1.0)


def _latent_distribution(kappa_k: np.ndarray) -> np.ndarray:
    w = 1.0 - kappa_k
    total = w.sum()
    if total <= 0:
        return np.full(kappa_k.shape[0], 1.0 / kappa_k.shape[0])
    # weighting latent draws toward concept-poor classes keeps the label
    # marginal uniform despite per-class completeness differences
    return w / total


def _generate_split(
    config: SyntheticConfig,
    n: int,
    templates: np.ndarray,
    kappa_k: np.ndarray,
    latent_p: np.ndarray,
    W: np.ndarray,
    U: np.ndarray,
    rng: np.random.Generator,
) -> TripletDataset:
    K = config.n_classes
    base = rng.integers(0, K, size=n)
    C = _flip_concepts(templates[base], config.concept_noise, config.group_spec, rng)
    nearest = nearest_template_labels(C, templates)
    concept_driven = rng.random(n) < kappa_k[base]
    z_label = rng.choice(K, size=n, p=latent_p)
    Y = np.where(concept_driven, nearest, z_label)
    amplitude = np.where(
        rng.random(n) < LATENT_SOLVABLE_FRACTION, LATENT_SCALE_HIGH, LATENT_SCALE_LOW
    )
    Z = np.zeros((n, K))
    Z[np.arange(n), z_label] = amplitude
    X = C @ W.T + Z @ U.T + rng.normal(0.0, FEATURE_NOISE_SIGMA, size=(n, config.n_features))
    return TripletDataset(X=X, C=C, Y=Y, n_classes=K)


def generate_synthetic(config: SyntheticConfig) -> SplitBundle:
    """Deterministic synthetic bundle for a fixed config (seed included)."""
    rng = np.random.default_rng(config.seed)
    templates = _sample_templates(config, rng)
    kappa_k = per_class_completeness(config.n_classes, config.completeness)
    latent_p = _latent_distribution(kappa_k)
    W = rng.normal(0.0, 1.0 / np.sqrt(config.n_concepts), size=(config.n_features, config.n_concepts))
    U = rng.normal(0.0, 1.0 / np.sqrt(config.n_features), size=(config.n_features, config.n_classes))
    splits = [
        _generate_split(config, n, templates, kappa_k, latent_p, W, U, rng)
        for n in (config.n_train, config.n_val, config.n_test)
    ]
    return SplitBundle(
        train=splits[0],
        val=splits[1],
        test=splits[2],
        seed=config.seed,
        group_spec=config.group_spec,
        templates=templates,
    )


# --- file format ------------------------------------------------------------

_SPLIT_ORDER = ("train", "val", "test")


def save_dataset(bundle: SplitBundle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        for name in _SPLIT_ORDER:
            split: TripletDataset = getattr(bundle, name)
            write_header(
                fh,
                {
                    "n": str(split.n),
                    "feature_dim": str(split.n_features),
                    "concept_dim": str(split.n_concepts),
                    "n_classes": str(split.n_classes),
                    "split": name,
                    "seed": str(bundle.seed),
                },
            )
            write_f64_block(fh, split.X)
            write_u8_block(fh, split.C)
            write_u32_block(fh, split.Y)


def load_dataset(path) -> SplitBundle:
    splits: dict[str, TripletDataset] = {}
    seed = 0
    dims: tuple[int, int, int] | None = None
    with open(path, "rb") as fh:
        read_magic(fh, DATASET_MAGIC)
        for name in _SPLIT_ORDER:
            fields = read_header(fh)
            if fields.get("split") != name:
                raise FormatError("malformed_header", f"expected split {name!r}, got {fields.get('split')!r}")
            n = header_int(fields, "n")
            d_feat = header_int(fields, "feature_dim")
            d_con = header_int(fields, "concept_dim")
            k = header_int(fields, "n_classes")
            seed = header_int(fields, "seed")
            if dims is None:
                dims = (d_feat, d_con, k)
            elif dims != (d_feat, d_con, k):
                raise FormatError("dimension_mismatch", f"split {name!r} dims {d_feat, d_con, k} != {dims}")
            X = read_f64_block(fh, (n, d_feat))
            C = read_u8_block(fh, (n, d_con)).astype(np.int64)
            Y = read_u32_block(fh, (n,))
            if C.size and not np.isin(C, (0, 1)).all():
                raise FormatError("malformed_header", "concept block is not binary")
            if Y.size and Y.max() >= k:
                raise FormatError("dimension_mismatch", "label block exceeds declared class count")
            splits[name] = TripletDataset(X=X, C=C, Y=Y, n_classes=k)
        trailing = fh.read(1)
        if trailing:
            raise FormatError("malformed_header", "trailing bytes after final split")
    return SplitBundle(train=splits["train"], val=splits["val"], test=splits["test"], seed=seed)
