"""Tabular datasets, the schema file format, CSV I/O and the synthetic biased-data generator.

A ``Dataset`` wraps a pandas frame whose index is the stable ``row_id``.
Categorical values are kept as strings, numeric values as float64. The frame
is treated as immutable: every transformation returns a new ``Dataset``.
"""

from __future__ import annotations

import itertools
import logging
import math
import string
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    DomainTooLarge,
    DuplicateHeader,
    EmptyFile,
    InvalidConfig,
    MissingColumn,
    MissingValue,
    NumericColumnSelected,
    SchemaError,
    TypeMismatch,
)

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
FEATURE = "feature"
PROTECTED = "protected"
LABEL = "label"

SYNTHETIC_COLUMN = "__synthetic"
DEFAULT_DOMAIN_CAP = 4096
DEFAULT_BINS = 8

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    role: str


@dataclass(frozen=True)
class Schema:
    """Column declarations plus the favorable label and privileged group values.

    ``unfavorable_label`` / ``unprivileged_value`` may be left unset in the
    schema file; ``resolve`` fills them from the second observed value.
    """

    columns: Tuple[Column, ...]
    favorable_label: str
    privileged_value: str
    unfavorable_label: Optional[str] = None
    unprivileged_value: Optional[str] = None

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if any(not n or not n.strip() for n in names):
            raise SchemaError("column names must be non-empty")
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names: {', '.join(dupes)}")
        for c in self.columns:
            if c.kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.role not in (FEATURE, PROTECTED, LABEL):
                raise SchemaError(f"column {c.name!r}: unknown role {c.role!r}")
            if c.name == SYNTHETIC_COLUMN:
                raise SchemaError(f"{SYNTHETIC_COLUMN} is reserved for provenance")
        for role in (LABEL, PROTECTED):
            found = [c for c in self.columns if c.role == role]
            if len(found) != 1:
                raise SchemaError(f"exactly one {role} column required, found {len(found)}")
            if found[0].kind != CATEGORICAL:
                raise SchemaError(f"{role} column {found[0].name!r} must be categorical")
        if self.unfavorable_label is not None and self.unfavorable_label == self.favorable_label:
            raise SchemaError("favorable and unfavorable labels must differ")
        if self.unprivileged_value is not None and self.unprivileged_value == self.privileged_value:
            raise SchemaError("privileged and unprivileged values must differ")

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def label(self) -> str:
        return next(c.name for c in self.columns if c.role == LABEL)

    @property
    def protected(self) -> str:
        return next(c.name for c in self.columns if c.role == PROTECTED)

    @property
    def features(self) -> List[Column]:
        return [c for c in self.columns if c.role == FEATURE]

    @property
    def feature_names(self) -> List[str]:
        return [c.name for c in self.features]

    @property
    def numeric_features(self) -> List[str]:
        return [c.name for c in self.features if c.kind == NUMERIC]

    @property
    def categorical_features(self) -> List[str]:
        return [c.name for c in self.features if c.kind == CATEGORICAL]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise MissingColumn(name)

    def with_kinds(self, kinds: Mapping[str, str]) -> "Schema":
        cols = tuple(Column(c.name, kinds.get(c.name, c.kind), c.role) for c in self.columns)
        return replace(self, columns=cols)

    def resolve(self, frame: pd.DataFrame) -> "Schema":
        """Check the label/protected columns hold two values and fill the implicit ones."""

        unfavorable = _second_value(frame[self.label], self.favorable_label, self.unfavorable_label, "label")
        unprivileged = _second_value(frame[self.protected], self.privileged_value, self.unprivileged_value,
                                     "protected")
        return replace(self, unfavorable_label=unfavorable, unprivileged_value=unprivileged)

    def to_dict(self) -> Dict[str, object]:
        return {
            "columns": [{"name": c.name, "kind": c.kind, "role": c.role} for c in self.columns],
            "favorable": self.favorable_label,
            "unfavorable": self.unfavorable_label,
            "privileged": self.privileged_value,
            "unprivileged": self.unprivileged_value,
        }


def _second_value(values: pd.Series, main: str, other: Optional[str], what: str) -> str:
    observed = sorted(set(values.tolist()))
    column = str(values.name)
    declared = {main} | ({other} if other is not None else set())
    extra = [v for v in observed if v not in declared]
    if other is None:
        if len(extra) != 1 or main not in observed:
            raise SchemaError(f"{what} column {column!r} must have exactly 2 observed values, got {observed}",
                              column=column)
        return extra[0]
    if extra:
        raise SchemaError(f"{what} column {column!r} has undeclared values {extra}", column=column)
    absent = sorted(declared.difference(observed))
    if absent:
        raise SchemaError(f"{what} column {column!r} never takes the declared value(s) {absent}", column=column)
    return other


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    frame: pd.DataFrame
    synthetic: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        missing = [n for n in self.schema.names if n not in self.frame.columns]
        if missing:
            raise MissingColumn(missing[0])
        if not self.frame.index.is_unique:
            raise SchemaError("row_ids must be unique")
        if self.schema.unfavorable_label is None or self.schema.unprivileged_value is None:
            raise SchemaError("schema must be resolved before building a Dataset")
        frame = self.frame[self.schema.names].copy()
        frame.index = pd.Index(frame.index.astype(np.int64), name="row_id")
        for c in self.schema.columns:
            if c.kind == NUMERIC:
                frame[c.name] = frame[c.name].astype(np.float64)
            else:
                frame[c.name] = frame[c.name].astype(str)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "synthetic", frozenset(int(r) for r in self.synthetic))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def row_ids(self) -> np.ndarray:
        return self.frame.index.to_numpy()

    def labels(self) -> np.ndarray:
        """1 where the label is favorable, else 0."""
        return (self.frame[self.schema.label].to_numpy() == self.schema.favorable_label).astype(np.int64)

    def groups(self) -> np.ndarray:
        """1 for the privileged group, 0 for the unprivileged (protected) group."""
        return (self.frame[self.schema.protected].to_numpy() == self.schema.privileged_value).astype(np.int64)

    def label_value(self, binary: int) -> str:
        return self.schema.favorable_label if binary else str(self.schema.unfavorable_label)

    def synthetic_mask(self) -> np.ndarray:
        return np.array([r in self.synthetic for r in self.row_ids], dtype=bool)

    def record(self, row_id: int) -> Dict[str, object]:
        return self.frame.loc[row_id].to_dict()

    def with_frame(self, frame: pd.DataFrame, synthetic: Optional[Iterable[int]] = None,
                   schema: Optional[Schema] = None) -> "Dataset":
        return Dataset(schema or self.schema, frame, frozenset(self.synthetic if synthetic is None else synthetic))

    def with_labels(self, binary_labels: Mapping[int, int]) -> "Dataset":
        frame = self.frame.copy()
        for row_id, value in binary_labels.items():
            frame.at[row_id, self.schema.label] = self.label_value(int(value))
        return self.with_frame(frame)

    def subset(self, row_ids: Sequence[int]) -> "Dataset":
        ids = list(row_ids)
        return self.with_frame(self.frame.loc[ids], synthetic=self.synthetic.intersection(ids))

    def equals(self, other: "Dataset") -> bool:
        return (self.schema == other.schema and self.synthetic == other.synthetic
                and self.frame.equals(other.frame))


# ──────────────── schema file ────────────────

def parse_schema(text: str) -> Schema:
    """Parse the declarative schema format.

    One ``name kind role`` line per column, plus ``favorable <value>`` and
    ``privileged <value>`` directives (``unfavorable`` / ``unprivileged`` are
    optional). Blank lines and ``#`` comments are ignored.
    """

    columns: List[Column] = []
    directives: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] in ("favorable", "privileged", "unfavorable", "unprivileged"):
            if len(parts) != 2:
                raise SchemaError(f"line {lineno}: expected '{parts[0]} <value>'")
            directives[parts[0]] = parts[1]
            continue
        if len(parts) != 3:
            raise SchemaError(f"line {lineno}: expected 'name kind role', got {line!r}")
        columns.append(Column(*parts))
    for required in ("favorable", "privileged"):
        if required not in directives:
            raise SchemaError(f"schema is missing the '{required}' directive")
    return Schema(
        columns=tuple(columns),
        favorable_label=directives["favorable"],
        privileged_value=directives["privileged"],
        unfavorable_label=directives.get("unfavorable"),
        unprivileged_value=directives.get("unprivileged"),
    )


def load_schema(path: PathLike) -> Schema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


# ──────────────── CSV ────────────────

def load_csv(path: PathLike, schema: Schema) -> Dataset:
    path = Path(path)
    try:
        header = pd.read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False,
                             encoding="utf-8").iloc[0].tolist()
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} is empty") from None
    seen: set = set()
    for name in header:
        if name in seen:
            raise DuplicateHeader(name)
        seen.add(name)
    for name in schema.names:
        if name not in seen:
            raise MissingColumn(name)

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise SchemaError(f"{path}: malformed CSV: {e}") from None
    if raw.empty:
        raise EmptyFile(f"{path} has a header but no rows")
    raw.index = pd.RangeIndex(len(raw), name="row_id")

    frame = pd.DataFrame(index=raw.index)
    for c in schema.columns:
        values = raw[c.name]
        blank = values.isna() | (values.astype(str).str.strip() == "")
        if blank.any():
            raise MissingValue(int(blank.idxmax()), c.name)
        if c.kind == NUMERIC:
            parsed = pd.to_numeric(values, errors="coerce")
            bad = parsed.isna() | ~np.isfinite(parsed.fillna(0.0))
            if bad.any():
                row = int(bad.idxmax())
                raise TypeMismatch(row, c.name, str(values.iloc[row]))
            frame[c.name] = parsed.astype(np.float64)
        else:
            frame[c.name] = values.astype(str)

    synthetic: FrozenSet[int] = frozenset()
    if SYNTHETIC_COLUMN in raw.columns:
        synthetic = frozenset(int(i) for i in raw.index[raw[SYNTHETIC_COLUMN].str.strip() == "1"])
    return Dataset(schema.resolve(frame), frame, synthetic)


def write_csv(data: Dataset, path: PathLike) -> None:
    frame = data.frame.copy()
    if data.synthetic:
        frame[SYNTHETIC_COLUMN] = data.synthetic_mask().astype(int)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


# ──────────────── generator ────────────────

@dataclass(frozen=True)
class GeneratorConfig:
    n_rows: int
    base_positive_rate: float
    bias_strength: float
    proxy_correlation: float
    noise_features: int = 0
    seed: int = 0
    numeric_features: int = 0
    noise_levels: int = 3
    merit_shift: float = 1.0

    def __post_init__(self) -> None:
        if self.n_rows < 2:
            raise InvalidConfig(f"n_rows must be >= 2, got {self.n_rows}")
        for name in ("base_positive_rate", "bias_strength", "proxy_correlation"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidConfig(f"{name} must be in [0, 1], got {v}")
        if self.base_positive_rate - self.bias_strength < 0.0:
            raise InvalidConfig("base_positive_rate - bias_strength must stay a probability")
        if self.noise_features < 0 or self.numeric_features < 0:
            raise InvalidConfig("feature counts must be non-negative")
        if not (1 <= self.noise_levels <= 26):
            raise InvalidConfig("noise_levels must be in [1, 26]")
        if self.seed < 0:
            raise InvalidConfig("seed must be unsigned")


def standard_config(**overrides: object) -> GeneratorConfig:
    base = dict(n_rows=1000, base_positive_rate=0.6, bias_strength=0.3, proxy_correlation=0.8,
                noise_features=2, numeric_features=2, seed=7)
    base.update(overrides)
    return GeneratorConfig(**base)  # type: ignore[arg-type]


def synthetic_schema(config: GeneratorConfig) -> Schema:
    cols = [Column("z", CATEGORICAL, PROTECTED), Column("proxy", CATEGORICAL, FEATURE)]
    cols += [Column(f"noise_{j}", CATEGORICAL, FEATURE) for j in range(config.noise_features)]
    cols += [Column(f"merit_{j}", NUMERIC, FEATURE) for j in range(config.numeric_features)]
    cols.append(Column("label", CATEGORICAL, LABEL))
    return Schema(tuple(cols), favorable_label="1", privileged_value="1",
                  unfavorable_label="0", unprivileged_value="0")


def generate_synthetic(config: GeneratorConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    n = config.n_rows

    z = (rng.random(n) < 0.5).astype(np.int64)
    keep = rng.random(n) < config.proxy_correlation
    proxy = np.where(keep, z, 1 - z)
    rate = np.where(z == 1, config.base_positive_rate, config.base_positive_rate - config.bias_strength)
    y = (rng.random(n) < rate).astype(np.int64)
    noise = rng.integers(0, config.noise_levels, size=(n, config.noise_features))
    merit = rng.normal(loc=(y * config.merit_shift)[:, None], scale=1.0, size=(n, config.numeric_features))

    letters = np.array(list(string.ascii_lowercase[: config.noise_levels]))
    frame = pd.DataFrame(index=pd.RangeIndex(n, name="row_id"))
    frame["z"] = z.astype(str)
    frame["proxy"] = proxy.astype(str)
    for j in range(config.noise_features):
        frame[f"noise_{j}"] = letters[noise[:, j]]
    for j in range(config.numeric_features):
        frame[f"merit_{j}"] = merit[:, j]
    frame["label"] = y.astype(str)
    return Dataset(synthetic_schema(config), frame)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Split by a seeded permutation of row_ids. ``test_fraction == 0`` returns the data twice."""

    if not (0.0 <= test_fraction < 1.0):
        raise InvalidConfig(f"test_fraction must be in [0, 1), got {test_fraction}")
    if test_fraction == 0.0:
        return data, data
    rng = np.random.default_rng(seed)
    ids = data.row_ids
    order = rng.permutation(len(ids))
    n_test = max(1, int(round(len(ids) * test_fraction)))
    test_ids = set(ids[order[:n_test]].tolist())
    train = [r for r in ids if r not in test_ids]
    test = [r for r in ids if r in test_ids]
    return data.subset(train), data.subset(test)


# ──────────────── finite domains ────────────────

@dataclass(frozen=True)
class Binning:
    """Equal-width bins for numeric feature columns, fitted once and reused."""

    edges: Dict[str, Tuple[float, ...]]

    @classmethod
    def fit(cls, data: Dataset, columns: Optional[Sequence[str]] = None, bins: int = DEFAULT_BINS) -> "Binning":
        if bins < 1:
            raise InvalidConfig("bins must be >= 1")
        cols = list(columns) if columns is not None else data.schema.numeric_features
        edges: Dict[str, Tuple[float, ...]] = {}
        for name in cols:
            if data.schema.column(name).kind != NUMERIC:
                continue
            values = data.frame[name].to_numpy()
            lo, hi = float(values.min()), float(values.max())
            if lo == hi:
                edges[name] = (lo, hi)
            else:
                edges[name] = tuple(float(e) for e in np.linspace(lo, hi, bins + 1))
        return cls(edges)

    def transform(self, data: Dataset) -> Dataset:
        if not self.edges:
            return data
        frame = data.frame.copy()
        for name, edges in self.edges.items():
            inner = np.asarray(edges[1:-1])
            idx = np.digitize(frame[name].to_numpy(), inner, right=False)
            frame[name] = np.char.add("b", idx.astype(str))
        schema = data.schema.with_kinds({name: CATEGORICAL for name in self.edges})
        return data.with_frame(frame, schema=schema)

    def to_dict(self) -> Dict[str, List[float]]:
        return {k: list(v) for k, v in sorted(self.edges.items())}


Cell = Tuple[Tuple[str, ...], int, int]


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Empirical table over (x, y, z) cells with positive count.

    ``y`` is 1 for the favorable label and ``z`` is 1 for the privileged group.
    """

    feature_names: Tuple[str, ...]
    domains: Tuple[Tuple[str, ...], ...]
    cells: Tuple[Cell, ...]
    counts: np.ndarray
    n: int

    @property
    def probs(self) -> np.ndarray:
        return self.counts / float(self.n)

    def index(self) -> Dict[Cell, int]:
        return {cell: i for i, cell in enumerate(self.cells)}

    def mass(self, cell: Cell) -> float:
        i = self.index().get(cell)
        return 0.0 if i is None else float(self.counts[i]) / self.n

    def x_domain(self) -> List[Tuple[str, ...]]:
        return [tuple(x) for x in itertools.product(*self.domains)]

    def label_marginal(self) -> np.ndarray:
        p = np.zeros(2)
        for (x, y, z), q in zip(self.cells, self.probs):
            p[y] += q
        return p

    def group_mass(self) -> np.ndarray:
        p = np.zeros(2)
        for (x, y, z), q in zip(self.cells, self.probs):
            p[z] += q
        return p

    def xy_marginal(self) -> Dict[Tuple[Tuple[str, ...], int], float]:
        out: Dict[Tuple[Tuple[str, ...], int], float] = {}
        for (x, y, z), q in zip(self.cells, self.probs):
            out[(x, y)] = out.get((x, y), 0.0) + float(q)
        return out


def empirical_joint(data: Dataset, feature_subset: Sequence[str],
                    cap: int = DEFAULT_DOMAIN_CAP) -> JointDistribution:
    names = tuple(feature_subset)
    for name in names:
        if data.schema.column(name).kind == NUMERIC:
            raise NumericColumnSelected(name)
    domains = tuple(tuple(sorted(set(data.frame[name].tolist()))) for name in names)
    size = math.prod(len(d) for d in domains)
    if size > cap:
        raise DomainTooLarge(f"feature domain has {size} cells, cap is {cap}", size=size, cap=cap)

    y = data.labels()
    z = data.groups()
    xs = data.frame[list(names)].itertuples(index=False, name=None) if names else iter([()] * len(data))
    counter: Dict[Cell, int] = {}
    for x, yi, zi in zip(xs, y, z):
        cell = (tuple(x), int(yi), int(zi))
        counter[cell] = counter.get(cell, 0) + 1
    cells = tuple(sorted(counter))
    counts = np.array([counter[c] for c in cells], dtype=np.int64)
    return JointDistribution(names, domains, cells, counts, len(data))
