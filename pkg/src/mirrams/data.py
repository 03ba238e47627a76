"""Tabular datasets: schema files, CSV ingestion, stratified splits, standardization.

Schema files are INI-style key-value text::

    # qsar biodegradation
    [columns]
    SpMax_L = continuous
    color   = categorical: red, green, blue
    class   = label: NRB, RB

    [options]
    positive = RB          ; binary tasks: this label value becomes class 1
    header = false         ; if false, CSV columns are taken in [columns] order
    delimiter = semicolon  ; comma (default), semicolon, tab or a literal character
    na_tokens = NA, ?      ; the empty cell is always missing

Feature order inside a dataset is: continuous columns (schema order), then
categorical columns.  The mask uses the same order; True means observed.
Missing continuous entries hold NaN, which the model never reads.
"""

from __future__ import annotations

import configparser
import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DEFAULT_NA_TOKENS = ("", "NA", "?")
CONTINUOUS, CATEGORICAL, LABEL = "continuous", "categorical", "label"


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    vocabulary: tuple[str, ...] = ()


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    positive: str | None = None
    header: bool = True
    delimiter: str = ","
    na_tokens: tuple[str, ...] = DEFAULT_NA_TOKENS

    def __post_init__(self):
        labels = [c for c in self.columns if c.kind == LABEL]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        for c in self.columns:
            if c.kind not in (CONTINUOUS, CATEGORICAL, LABEL):
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.kind != CONTINUOUS:
                if not c.vocabulary and c.kind == LABEL:
                    raise SchemaError(f"column {c.name!r}: empty vocabulary")
                if len(set(c.vocabulary)) != len(c.vocabulary):
                    raise SchemaError(f"column {c.name!r}: duplicate vocabulary entries")
        label = labels[0]
        if self.positive is not None and self.positive not in label.vocabulary:
            raise SchemaError(f"positive label {self.positive!r} not in {label.vocabulary}")

    @property
    def label(self) -> Column:
        return next(c for c in self.columns if c.kind == LABEL)

    @property
    def continuous(self) -> list[Column]:
        return [c for c in self.columns if c.kind == CONTINUOUS]

    @property
    def categorical(self) -> list[Column]:
        return [c for c in self.columns if c.kind == CATEGORICAL]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.continuous] + [c.name for c in self.categorical]

    @property
    def classes(self) -> tuple[str, ...]:
        """Label values in class-index order; a binary positive label is index 1."""
        vocab = self.label.vocabulary
        if self.positive is not None and len(vocab) == 2:
            return tuple(v for v in vocab if v != self.positive) + (self.positive,)
        return vocab

    def with_vocabulary(self, name: str, vocabulary) -> "Schema":
        cols = tuple(
            replace(c, vocabulary=tuple(vocabulary)) if c.name == name else c for c in self.columns
        )
        return replace(self, columns=cols)


def _split_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",")) if text.strip() else ()


_DELIMITER_NAMES = {"comma": ",", "semicolon": ";", "tab": "\t", "\\t": "\t", "space": " "}


def parse_schema(text: str) -> Schema:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",), comment_prefixes=("#",),
                                       interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    if "columns" not in parser:
        raise SchemaError("schema is missing a [columns] section")
    cols = []
    for name, spec in parser["columns"].items():
        kind, _, vocab = spec.partition(":")
        cols.append(Column(name, kind.strip(), _split_list(vocab)))
    opts = parser["options"] if "options" in parser else {}
    na = opts.get("na_tokens")
    delimiter = opts.get("delimiter", ",")
    delimiter = _DELIMITER_NAMES.get(delimiter, delimiter)
    if len(delimiter) != 1:
        raise SchemaError(f"delimiter must be a single character or one of {sorted(_DELIMITER_NAMES)}")
    return Schema(
        tuple(cols),
        positive=opts.get("positive") or None,
        header=str(opts.get("header", "true")).lower() in ("1", "true", "yes"),
        delimiter=delimiter,
        na_tokens=("",) + _split_list(na) if na is not None else DEFAULT_NA_TOKENS,
    )


def load_schema(path) -> Schema:
    return parse_schema(Path(path).read_text())


def format_schema(schema: Schema) -> str:
    lines = ["[columns]"]
    for c in schema.columns:
        vocab = f": {', '.join(c.vocabulary)}" if c.vocabulary else ""
        lines.append(f"{c.name} = {c.kind}{vocab}")
    names = {",": "comma", ";": "semicolon", "\t": "tab", " ": "space"}
    delimiter = names.get(schema.delimiter, schema.delimiter)
    lines += ["", "[options]", f"header = {str(schema.header).lower()}",
              f"delimiter = {delimiter}",
              f"na_tokens = {', '.join(t for t in schema.na_tokens if t)}"]
    if schema.positive is not None:
        lines.append(f"positive = {schema.positive}")
    return "\n".join(lines) + "\n"


@dataclass
class TabularDataset:
    """Preprocessed-or-raw table split into continuous and categorical blocks.

    ``y`` is None for unlabeled data.  Categorical index ``len(vocab)`` is the
    reserved unknown-value slot.
    """

    schema: Schema
    x_cont: np.ndarray
    x_cat: np.ndarray
    mask: np.ndarray
    y: np.ndarray | None = None
    index: np.ndarray | None = None

    def __post_init__(self):
        n = self.x_cont.shape[0]
        self.x_cont = np.asarray(self.x_cont, dtype=np.float64).reshape(n, -1)
        self.x_cat = np.asarray(self.x_cat, dtype=np.int64).reshape(n, -1)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (n, self.p):
            raise DataError(f"mask shape {self.mask.shape} != ({n}, {self.p})")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (n,):
                raise DataError("labels must be a vector with one entry per row")
        if self.index is None:
            self.index = np.arange(n)

    @property
    def n(self) -> int:
        return self.x_cont.shape[0]

    @property
    def p(self) -> int:
        return self.x_cont.shape[1] + self.x_cat.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.schema.classes)

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def __len__(self) -> int:
        return self.n

    def subset(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        return TabularDataset(
            self.schema, self.x_cont[rows], self.x_cat[rows], self.mask[rows],
            None if self.y is None else self.y[rows], self.index[rows],
        )

    def with_mask(self, mask: np.ndarray) -> "TabularDataset":
        return replace(self, mask=np.asarray(mask, dtype=bool).copy())

    def apply_mask(self, extra: np.ndarray) -> "TabularDataset":
        """AND ``extra`` into the native mask (entries already missing stay missing)."""
        extra = np.asarray(extra, dtype=bool)
        if extra.shape != self.mask.shape:
            raise DataError(f"mask shape {extra.shape} != {self.mask.shape}")
        return self.with_mask(self.mask & extra)

    def drop_labels(self) -> "TabularDataset":
        return replace(self, y=None)

    def positive_rate(self) -> float:
        return float((self.y == 1).mean())


# -- CSV ----------------------------------------------------------------------


def load_csv(path, schema: Schema, training: bool = True) -> tuple[TabularDataset, Schema]:
    """Read a CSV into a dataset.

    When ``training`` is true, unseen categorical values extend the schema's
    vocabulary; otherwise they map to the unknown slot.  Returns the dataset
    and the (possibly extended) schema.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=schema.delimiter))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    names = [c.name for c in schema.columns]
    if schema.header:
        if not rows:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        unknown = [h for h in header if h not in names]
        if unknown:
            raise DataError(f"{path}: unknown column(s) {unknown}")
        missing = [nm for nm in names if nm not in header]
        if missing:
            raise DataError(f"{path}: column(s) {missing} absent from header")
        pos = {h: i for i, h in enumerate(header)}
        rows = rows[1:]
    else:
        pos = {nm: i for i, nm in enumerate(names)}
    for lineno, r in enumerate(rows, start=2 if schema.header else 1):
        if len(r) != len(pos):
            raise DataError(f"{path}:{lineno}: expected {len(pos)} fields, got {len(r)}")

    na = set(schema.na_tokens)
    n = len(rows)
    cont, cat = schema.continuous, schema.categorical
    x_cont = np.full((n, len(cont)), np.nan)
    x_cat = np.zeros((n, len(cat)), dtype=np.int64)
    mask = np.ones((n, len(cont) + len(cat)), dtype=bool)

    for j, col in enumerate(cont):
        for i, r in enumerate(rows):
            cell = r[pos[col.name]].strip()
            if cell in na:
                mask[i, j] = False
                continue
            try:
                x_cont[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i + 1}, column {col.name!r}: cannot parse {cell!r}") from None

    for j, col in enumerate(cat):
        vocab = list(col.vocabulary)
        lookup = {v: k for k, v in enumerate(vocab)}
        raw = []
        for i, r in enumerate(rows):
            cell = r[pos[col.name]].strip()
            if cell in na:
                mask[i, len(cont) + j] = False
                raw.append(None)
                continue
            if cell not in lookup and training:
                lookup[cell] = len(vocab)
                vocab.append(cell)
            raw.append(cell)
        schema = schema.with_vocabulary(col.name, vocab)
        unknown = len(vocab)
        x_cat[:, j] = [0 if v is None else lookup.get(v, unknown) for v in raw]

    classes = schema.classes
    cls_index = {v: k for k, v in enumerate(classes)}
    y = np.empty(n, dtype=np.int64)
    for i, r in enumerate(rows):
        cell = r[pos[schema.label.name]].strip()
        if cell in na:
            raise DataError(f"{path}: row {i + 1}: label missing")
        if cell not in cls_index:
            raise DataError(f"{path}: row {i + 1}: label {cell!r} not in schema {classes}")
        y[i] = cls_index[cell]
    return TabularDataset(schema, x_cont, x_cat, mask, y), schema


def write_csv(path, ds: TabularDataset) -> None:
    """Write ``ds`` with a header; missing cells are written empty."""
    schema = ds.schema
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        cont, cat = schema.continuous, schema.categorical
        w.writerow([c.name for c in cont] + [c.name for c in cat] + [schema.label.name])
        for i in range(ds.n):
            row = [repr(float(v)) if ds.mask[i, j] else "" for j, v in enumerate(ds.x_cont[i])]
            for j, col in enumerate(cat):
                k = ds.x_cat[i, j]
                row.append(col.vocabulary[k] if ds.mask[i, len(cont) + j] and k < len(col.vocabulary) else "")
            row.append(schema.classes[ds.y[i]])
            w.writerow(row)


# -- splitting ------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, ...] = (0.65, 0.15, 0.2)
    seed: int = 0

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be positive and sum to 1, got {self.ratios}")


def split_sizes(n: int, ratios) -> list[int]:
    sizes = [int(round(n * r)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    if min(sizes) < 1:
        raise DataError(f"split of {n} rows by {tuple(ratios)} leaves an empty part")
    return sizes


def stratified_order(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ordering of rows in which every prefix is (to within a row) label-stratified."""
    y = np.asarray(y)
    keys = np.empty(y.size)
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        members = members[rng.permutation(members.size)]
        keys[members] = (np.arange(members.size) + rng.random()) / members.size
    tiebreak = rng.random(y.size)
    return np.lexsort((tiebreak, keys))


def split_indices(y: np.ndarray, spec: SplitSpec) -> list[np.ndarray]:
    """Disjoint, covering, label-stratified index sets (sorted)."""
    rng = np.random.default_rng(spec.seed)
    order = stratified_order(y, rng)
    bounds = np.cumsum(split_sizes(len(y), spec.ratios))[:-1]
    return [np.sort(part) for part in np.split(order, bounds)]


def split(ds: TabularDataset, spec: SplitSpec = SplitSpec()) -> list[TabularDataset]:
    return [ds.subset(idx) for idx in split_indices(ds.y, spec)]


def save_split_manifest(path, parts: list[np.ndarray], spec: SplitSpec) -> None:
    names = ["train", "val", "test"] if len(parts) == 3 else [f"part{i}" for i in range(len(parts))]
    payload = {"ratios": list(spec.ratios), "seed": spec.seed}
    payload.update({nm: [int(i) for i in p] for nm, p in zip(names, parts)})
    Path(path).write_text(json.dumps(payload))


def load_split_manifest(path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    return {k: np.asarray(v, dtype=np.int64) for k, v in payload.items() if isinstance(v, list) and k != "ratios"}


# -- preprocessing ----------------------------------------------------------------


@dataclass
class Preprocessor:
    """Per-column standardization fitted on observed training entries.

    Uses the population variance (ddof=0).  Columns with zero observed
    variance, or no observed entries, get std 1.
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    std: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def fit(cls, train: TabularDataset) -> "Preprocessor":
        pc = train.x_cont.shape[1]
        mean, std = np.zeros(pc), np.ones(pc)
        for j in range(pc):
            obs = train.x_cont[train.mask[:, j], j]
            if obs.size:
                mean[j] = obs.mean()
                s = obs.std()
                std[j] = s if s > 0 else 1.0
        return cls(mean, std)

    def transform(self, ds: TabularDataset) -> TabularDataset:
        pc = ds.x_cont.shape[1]
        observed = ds.mask[:, :pc]
        x = ds.x_cont.copy()
        scaled = (ds.x_cont - self.mean) / self.std
        x[observed] = scaled[observed]
        return replace(ds, x_cont=x)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_apply_preprocessor(train: TabularDataset, *others: TabularDataset):
    pre = Preprocessor.fit(train)
    return (pre, pre.transform(train), *(pre.transform(o) for o in others))


# -- synthetic data -------------------------------------------------------------


def make_synthetic(
    n: int = 1000,
    p_cont: int = 8,
    p_cat: int = 0,
    n_levels: int = 3,
    positive_ratio: float = 0.35,
    noise: float = 0.5,
    redundancy: float = 0.8,
    seed: int = 0,
) -> TabularDataset:
    """Binary task whose label depends on correlated features.

    Features share latent factors (``redundancy`` controls how much), so a
    model can recover the signal of a missing feature from its neighbours;
    this is what makes robustness to missingness learnable.
    """
    rng = np.random.default_rng(seed)
    n_latent = max(2, (p_cont + p_cat) // 3)
    z = rng.standard_normal((n, n_latent))
    load = rng.standard_normal((n_latent, p_cont + p_cat))
    feats = redundancy * (z @ load) / np.sqrt(n_latent) + np.sqrt(1 - redundancy**2) * rng.standard_normal(
        (n, p_cont + p_cat)
    )
    w = rng.standard_normal(n_latent)
    score = z @ w / np.linalg.norm(w) + 0.5 * np.tanh(z[:, 0] * z[:, 1]) + noise * rng.standard_normal(n)
    y = (score > np.quantile(score, 1 - positive_ratio)).astype(np.int64)

    x_cont = feats[:, :p_cont]
    cuts = np.quantile(feats[:, p_cont:], np.linspace(0, 1, n_levels + 1)[1:-1], axis=0) if p_cat else None
    x_cat = np.zeros((n, p_cat), dtype=np.int64)
    for j in range(p_cat):
        x_cat[:, j] = np.searchsorted(cuts[:, j], feats[:, p_cont + j])

    cols = [Column(f"x{j}", CONTINUOUS) for j in range(p_cont)]
    cols += [Column(f"c{j}", CATEGORICAL, tuple(f"l{k}" for k in range(n_levels))) for j in range(p_cat)]
    cols.append(Column("label", LABEL, ("0", "1")))
    schema = Schema(tuple(cols), positive="1")
    return TabularDataset(schema, x_cont, x_cat, np.ones((n, p_cont + p_cat), dtype=bool), y)


def make_separable(n: int = 400, margin: float = 0.5, seed: int = 0) -> TabularDataset:
    """Two continuous features, label = sign(x0 + x1) with a gap of ``margin``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4 * n, 2))
    s = x.sum(axis=1)
    keep = np.abs(s) > margin
    x, s = x[keep][:n], s[keep][:n]
    y = (s > 0).astype(np.int64)
    schema = Schema((Column("x0", CONTINUOUS), Column("x1", CONTINUOUS), Column("label", LABEL, ("0", "1"))),
                    positive="1")
    return TabularDataset(schema, x, np.zeros((n, 0), dtype=np.int64), np.ones((n, 2), dtype=bool), y)
