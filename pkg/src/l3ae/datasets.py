"""Interaction, tag and embedding ingestion plus the filter/split protocol.

File formats
------------
interactions  ``user_id<TAB>item_id<TAB>rating[<TAB>timestamp]`` per line
tags          ``item_id<TAB>tag`` per line
embeddings    raw little-endian scalars, item-contiguous (column-major d x n),
              with a JSON sidecar ``{d, n, dtype, layout, item_ids}``
split dir     ``manifest.json`` + ``train.tsv`` / ``validation.tsv`` / ``test.tsv``
              holding ``user_id<TAB>item_id`` rows
"""

from __future__ import annotations

import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DataError, ParameterError

logger = logging.getLogger(__name__)

Pair = tuple[str, str]
PARTS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user x item matrix with stable external-id maps."""

    matrix: sp.csr_matrix
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[Pair], user_ids: Sequence[str] | None = None,
                   item_ids: Sequence[str] | None = None) -> "InteractionMatrix":
        pairs = list(pairs)
        if user_ids is None:
            user_ids = sorted({u for u, _ in pairs})
        if item_ids is None:
            item_ids = sorted({i for _, i in pairs})
        uidx = {u: j for j, u in enumerate(user_ids)}
        iidx = {i: j for j, i in enumerate(item_ids)}
        try:
            rows = np.fromiter((uidx[u] for u, _ in pairs), dtype=np.int64, count=len(pairs))
            cols = np.fromiter((iidx[i] for _, i in pairs), dtype=np.int64, count=len(pairs))
        except KeyError as exc:
            raise DataError(f"id {exc.args[0]!r} is not in the index space") from None
        m = sp.csr_matrix((np.ones(len(pairs)), (rows, cols)),
                          shape=(len(user_ids), len(item_ids)), dtype=np.float64)
        m.sum_duplicates()
        m.data[:] = 1.0
        m.sort_indices()
        return cls(m, tuple(user_ids), tuple(item_ids))

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def pairs(self) -> list[Pair]:
        coo = self.matrix.tocoo()
        return [(self.user_ids[u], self.item_ids[i]) for u, i in zip(coo.row, coo.col)]

    def item_popularity(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense feature x item matrix (semantic embeddings or multi-hot tags)."""

    values: np.ndarray
    item_ids: tuple[str, ...]
    kind: str = "semantic"
    row_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("semantic", "tag"):
            raise ParameterError(f"unknown feature kind {self.kind!r}")
        if self.values.ndim != 2 or self.values.shape[1] != len(self.item_ids):
            raise DataError(f"feature matrix shape {self.values.shape} does not match "
                            f"{len(self.item_ids)} item ids")

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    def aligned_to(self, item_ids: Sequence[str]) -> "FeatureMatrix":
        """Reorder columns to ``item_ids``; extra columns are dropped."""
        item_ids = tuple(item_ids)
        if item_ids == self.item_ids:
            return self
        pos = {i: j for j, i in enumerate(self.item_ids)}
        missing = [i for i in item_ids if i not in pos]
        if missing:
            raise DataError(f"{len(missing)} items lack features: {missing[:20]}")
        extra = len(self.item_ids) - len(item_ids)
        if extra > 0:
            warnings.warn(f"ignoring features for {extra} items absent from the interactions",
                          stacklevel=2)
        cols = np.fromiter((pos[i] for i in item_ids), dtype=np.int64, count=len(item_ids))
        return FeatureMatrix(self.values[:, cols], item_ids, self.kind, self.row_labels)


@dataclass(frozen=True)
class SplitBundle:
    train: InteractionMatrix
    validation: InteractionMatrix
    test: InteractionMatrix
    seed: int
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def parts(self) -> dict[str, InteractionMatrix]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    @property
    def user_ids(self) -> tuple[str, ...]:
        return self.train.user_ids

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self.train.item_ids

    def counts(self) -> dict[str, int]:
        return {name: m.nnz for name, m in self.parts().items()}


@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    ratings: int
    density: float = field(init=False)

    def __post_init__(self):
        cells = self.users * self.items
        object.__setattr__(self, "density", self.ratings / cells if cells else 0.0)

    def as_dict(self) -> dict:
        return {"users": self.users, "items": self.items, "ratings": self.ratings,
                "density": self.density}


def pair_stats(pairs: Sequence[Pair]) -> DatasetStats:
    return DatasetStats(len({u for u, _ in pairs}), len({i for _, i in pairs}), len(pairs))


# ---------------------------------------------------------------------------
# Interactions
# ---------------------------------------------------------------------------


def load_interactions(path, rating_threshold: float = 3.0) -> list[Pair]:
    """Read an interaction file keeping ratings strictly above ``rating_threshold``.

    Duplicate (user, item) pairs collapse to one; first-occurrence order is kept.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"interaction file not found: {path}")
    seen: dict[Pair, None] = {}
    n_lines = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            n_lines += 1
            fields = line.split("\t")
            if len(fields) not in (3, 4) or not fields[0] or not fields[1]:
                raise DataError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
            try:
                rating = float(fields[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: rating {fields[2]!r} is not a number") from None
            if rating > rating_threshold:
                seen.setdefault((fields[0], fields[1]), None)
    if not seen:
        raise DataError(f"{path}: no interactions with rating > {rating_threshold} "
                        f"({n_lines} records read)")
    return list(seen)


def write_interactions(path, records: Iterable[tuple[str, str, float, int]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for user, item, rating, ts in records:
            fh.write(f"{user}\t{item}\t{rating:g}\t{ts}\n")


def _encode(pairs: Sequence[Pair]):
    users = np.array([u for u, _ in pairs], dtype=object)
    items = np.array([i for _, i in pairs], dtype=object)
    uniq_u, u_idx = np.unique(users, return_inverse=True)
    uniq_i, i_idx = np.unique(items, return_inverse=True)
    return uniq_u, u_idx.ravel(), uniq_i, i_idx.ravel()


def k_core_filter(pairs: Sequence[Pair], k: int = 10) -> list[Pair]:
    """Largest subset where every user and item has at least ``k`` interactions."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    pairs = list(pairs)
    if not pairs:
        warnings.warn("k-core filter received no interactions", stacklevel=2)
        return []
    uniq_u, u_idx, uniq_i, i_idx = _encode(pairs)
    alive = kernels.kcore_mask(u_idx, i_idx, len(uniq_u), len(uniq_i), k)
    out = [p for p, keep in zip(pairs, alive) if keep]
    if not out:
        warnings.warn(f"{k}-core filtering removed every interaction", stacklevel=2)
    return out


def _largest_remainder(count: int, ratios: Sequence[Fraction]) -> list[int]:
    quotas = [r * count for r in ratios]
    sizes = [int(q) for q in quotas]  # floor; quotas are non-negative
    short = count - sum(sizes)
    # Stable sort keeps (train, validation, test) order among equal remainders.
    order = sorted(range(len(ratios)), key=lambda j: -(quotas[j] - sizes[j]))
    for j in order[:short]:
        sizes[j] += 1
    return sizes


def split(pairs: Sequence[Pair], seed: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> SplitBundle:
    """Per-user seeded shuffle, cut by cumulative ratio with largest-remainder rounding."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    fracs = [Fraction(r).limit_denominator(10**6) for r in ratios]
    pairs = list(dict.fromkeys(pairs))
    if not pairs:
        raise DataError("cannot split an empty interaction set")
    user_ids = sorted({u for u, _ in pairs})
    item_ids = sorted({i for _, i in pairs})
    by_user: dict[str, list[str]] = defaultdict(list)
    for u, i in pairs:
        by_user[u].append(i)

    rng = np.random.default_rng(seed)
    parts: dict[str, list[Pair]] = {name: [] for name in PARTS}
    for u in user_ids:
        items = sorted(by_user[u])
        perm = rng.permutation(len(items))
        sizes = _largest_remainder(len(items), fracs)
        start = 0
        for name, size in zip(PARTS, sizes):
            parts[name].extend((u, items[j]) for j in perm[start:start + size])
            start += size

    mats = {name: InteractionMatrix.from_pairs(p, user_ids, item_ids) for name, p in parts.items()}
    return SplitBundle(mats["train"], mats["validation"], mats["test"], int(seed), ratios)


def prepare(path, k: int = 10, seed: int = 0, rating_threshold: float = 3.0,
            ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[SplitBundle, DatasetStats]:
    """Threshold, k-core filter and split an interaction file."""
    raw = load_interactions(path, rating_threshold)
    filtered = k_core_filter(raw, k)
    if not filtered:
        raise DataError(f"dataset is empty after {k}-core filtering")
    stats = pair_stats(filtered)
    logger.info("prepared %d users, %d items, %d ratings", stats.users, stats.items, stats.ratings)
    return split(filtered, seed, ratios), stats


def save_split(bundle: SplitBundle, out_dir, stats: DatasetStats | None = None,
               extra: Mapping | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, mat in bundle.parts().items():
        with (out / f"{name}.tsv").open("w", encoding="utf-8", newline="\n") as fh:
            for u, i in sorted(mat.pairs()):
                fh.write(f"{u}\t{i}\n")
    manifest = {
        "seed": bundle.seed,
        "ratios": list(bundle.ratios),
        "counts": bundle.counts(),
        "user_ids": list(bundle.user_ids),
        "item_ids": list(bundle.item_ids),
    }
    if stats is not None:
        manifest["stats"] = stats.as_dict()
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_split(split_dir) -> SplitBundle:
    d = Path(split_dir)
    manifest_path = d / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no split manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    users, items = manifest["user_ids"], manifest["item_ids"]
    mats = {}
    for name in PARTS:
        pairs = []
        with (d / f"{name}.tsv").open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.rstrip("\r\n").split("\t")
                if len(fields) != 2:
                    raise DataError(f"{d / name}.tsv:{lineno}: expected 2 fields")
                pairs.append((fields[0], fields[1]))
        mats[name] = InteractionMatrix.from_pairs(pairs, users, items)
        if mats[name].nnz != manifest["counts"][name]:
            raise DataError(f"{name}.tsv has {mats[name].nnz} rows, manifest says "
                            f"{manifest['counts'][name]}")
    return SplitBundle(mats["train"], mats["validation"], mats["test"],
                       int(manifest["seed"]), tuple(manifest["ratios"]))


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def default_header_path(matrix_path) -> Path:
    p = Path(matrix_path)
    return p.with_name(p.name + ".json")


def load_embeddings(matrix_path, header_path=None, item_ids: Sequence[str] | None = None,
                    normalize: bool = False) -> FeatureMatrix:
    """Read a binary embedding payload and its JSON header.

    With ``item_ids`` the columns are reordered to that order; missing items are
    an error, surplus items are dropped with a warning. ``normalize`` rescales
    every column to unit L2 norm.
    """
    header_path = default_header_path(matrix_path) if header_path is None else Path(header_path)
    try:
        header = json.loads(Path(header_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{header_path}: invalid header ({exc})") from None
    for key in ("d", "n", "dtype", "item_ids"):
        if key not in header:
            raise DataError(f"{header_path}: header lacks {key!r}")
    d, n = int(header["d"]), int(header["n"])
    if header["dtype"] not in _DTYPES:
        raise DataError(f"{header_path}: unknown dtype {header['dtype']!r}")
    if header.get("layout", "column-major") != "column-major":
        raise DataError(f"{header_path}: unsupported layout {header['layout']!r}")
    ids = tuple(str(i) for i in header["item_ids"])
    if len(ids) != n:
        raise DataError(f"{header_path}: {len(ids)} item ids for n={n}")
    if len(set(ids)) != n:
        raise DataError(f"{header_path}: duplicate item ids")

    dtype = _DTYPES[header["dtype"]]
    payload = Path(matrix_path).read_bytes()
    expected = d * n * dtype.itemsize
    if len(payload) != expected:
        raise DataError(f"{matrix_path}: payload is {len(payload)} bytes, expected "
                        f"{expected} (d={d}, n={n}, {header['dtype']})")
    values = np.frombuffer(payload, dtype=dtype).reshape(n, d).T.astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{matrix_path}: embeddings contain non-finite values")
    if normalize:
        norms = np.linalg.norm(values, axis=0)
        if np.any(norms == 0):
            zero = [ids[j] for j in np.flatnonzero(norms == 0)[:20]]
            raise DataError(f"cannot normalise zero-norm embeddings: {zero}")
        values = values / norms
    fm = FeatureMatrix(values, ids, "semantic")
    return fm if item_ids is None else fm.aligned_to(item_ids)


def write_embeddings(values: np.ndarray, item_ids: Sequence[str], matrix_path,
                     header_path=None, dtype: str = "f32") -> None:
    """Inverse of :func:`load_embeddings` for a d x n array."""
    if dtype not in _DTYPES:
        raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}")
    values = np.asarray(values)
    d, n = values.shape
    if n != len(item_ids):
        raise DataError(f"{n} columns but {len(item_ids)} item ids")
    header_path = default_header_path(matrix_path) if header_path is None else Path(header_path)
    Path(matrix_path).write_bytes(np.ascontiguousarray(values.T, dtype=_DTYPES[dtype]).tobytes())
    header = {"d": d, "n": n, "dtype": dtype, "layout": "column-major",
              "item_ids": list(item_ids)}
    Path(header_path).write_text(json.dumps(header) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Tags
# ---------------------------------------------------------------------------


def load_tags(path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0]:
                raise DataError(f"{path}:{lineno}: expected item_id<TAB>tag")
            out[fields[0]].append(fields[1])
    return dict(out)


def write_tags(path, tag_assignments: Mapping[str, Iterable[str]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for item, tags in tag_assignments.items():
            for tag in tags:
                fh.write(f"{item}\t{tag}\n")


def build_tag_matrix(tag_assignments: Mapping[str, Iterable[str]],
                     item_ids: Sequence[str] | None = None) -> FeatureMatrix:
    """Multi-hot tag x item matrix; rows follow the sorted vocabulary."""
    if item_ids is None:
        item_ids = list(tag_assignments)
    item_ids = tuple(item_ids)
    tag_sets = [set(tag_assignments.get(i, ())) for i in item_ids]
    vocab = sorted(set().union(*tag_sets)) if tag_sets else []
    row = {t: r for r, t in enumerate(vocab)}
    t = np.zeros((len(vocab), len(item_ids)), dtype=np.float64)
    for j, tags in enumerate(tag_sets):
        for tag in tags:
            t[row[tag], j] = 1.0
    untagged = sum(1 for s in tag_sets if not s)
    if untagged:
        warnings.warn(f"{untagged} of {len(item_ids)} items have no tags", stacklevel=2)
    return FeatureMatrix(t, item_ids, "tag", tuple(vocab))
