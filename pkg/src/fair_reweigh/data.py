"""Tabular ingestion: readers for the benchmark files, one-hot encoding,
train-fitted standardization, seeded splitting and the binary sensitive
attribute.

Everything downstream works on :class:`Dataset`, which holds the
standardized feature matrix ``x``, labels ``y`` and sensitive attribute ``a``.
"""

from __future__ import annotations

import fnmatch
import json
import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd

ROLES = ("train", "val", "test")
CONSTANT_STD = 1e-12


class DataError(ValueError):
    """Raised for unusable input data. ``kind`` is a short machine-readable tag."""

    def __init__(self, kind: str, message: str, column: str | None = None):
        super().__init__(message)
        self.kind = kind
        self.column = column


class Sample(NamedTuple):
    x: np.ndarray
    y: int
    a: int


class Dataset:
    """One split of a standardized binary-classification dataset.

    Reads of ``y`` are counted in ``label_reads`` so that callers can check
    that a held-out split was not consulted before final evaluation.
    """

    def __init__(self, x, y, a, role="train", feature_names=None, mean=None, std=None):
        x = np.array(x, dtype=float, copy=True)
        if x.ndim != 2:
            raise DataError("shape", f"feature matrix must be 2-D, got shape {x.shape}")
        y = np.asarray(y)
        a = np.asarray(a)
        if len(y) != len(x) or len(a) != len(x):
            raise DataError("shape", "x, y and a must have the same number of rows")
        if not np.isin(y, (0, 1)).all():
            raise DataError("label", "labels must be 0 or 1")
        if not np.isin(a, (0, 1)).all():
            raise DataError("sensitive", "sensitive attribute must be 0 or 1")
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        self._x = x
        self._y = y.astype(np.int64)
        self._a = a.astype(np.int64)
        for arr in (self._x, self._y, self._a):
            arr.flags.writeable = False
        self.role = role
        d = x.shape[1]
        self.feature_names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(d)]
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        self.std = np.ones(d) if std is None else np.asarray(std, dtype=float)
        self.label_reads = 0

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def a(self) -> np.ndarray:
        return self._a

    @property
    def y(self) -> np.ndarray:
        self.label_reads += 1
        return self._y

    @property
    def n(self) -> int:
        return self._x.shape[0]

    @property
    def d(self) -> int:
        return self._x.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i) -> Sample:
        return Sample(self._x[i], int(self.y[i]), int(self._a[i]))

    def __iter__(self) -> Iterator[Sample]:
        y = self.y
        for i in range(self.n):
            yield Sample(self._x[i], int(y[i]), int(self._a[i]))

    def with_labels(self, y) -> "Dataset":
        return Dataset(self._x, y, self._a, self.role, self.feature_names, self.mean, self.std)

    def subset(self, idx) -> "Dataset":
        return Dataset(self._x[idx], self._y[idx], self._a[idx], self.role, self.feature_names, self.mean, self.std)

    def group_counts(self) -> dict[str, int]:
        """Counts of the four (a, y) cells, keyed ``"a{a}_y{y}"``. Does not count as a label read."""
        return {
            f"a{a}_y{y}": int(np.sum((self._a == a) & (self._y == y)))
            for a in (0, 1)
            for y in (0, 1)
        }

    def positive_rates(self) -> tuple[float, float]:
        """P(y=1 | a=1), P(y=1 | a=0)."""
        return tuple(float(self._y[self._a == g].mean()) for g in (1, 0))

    def destandardize(self) -> np.ndarray:
        return destandardize(self._x, self.mean, self.std)


# -- standardization ---------------------------------------------------------

@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray


def standardize(train, *others):
    """Center and scale every column with statistics of ``train``.

    Population std (ddof=0). Columns whose std is below ``CONSTANT_STD`` are
    only centered. Returns ``(train_std, [others_std...], Standardization)``.
    """
    train = np.asarray(train, dtype=float)
    if train.shape[0] == 0:
        raise DataError("empty", "cannot standardize an empty training matrix")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std < CONSTANT_STD, 1.0, std)
    out = [(np.asarray(m, dtype=float) - mean) / std for m in others]
    return (train - mean) / std, out, Standardization(mean, std)


def destandardize(x, mean, std):
    return np.asarray(x) * std + mean


# -- ingestion config --------------------------------------------------------

@dataclass
class IngestConfig:
    label_column: str
    positive_label: object
    sensitive_column: str
    sensitive_threshold: float | None = None
    sensitive_positive: object = None
    label_threshold: float | None = None
    split: dict = field(default_factory=lambda: {"fractions": [0.6, 0.2, 0.2]})
    seed: int = 42
    reader: str = "csv"
    source: object = None
    drop_columns: list = field(default_factory=list)
    categorical_columns: list | None = None
    include_sensitive: bool = False
    na_values: list = field(default_factory=lambda: ["?"])
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "IngestConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError("config", f"unknown config keys: {sorted(unknown)}")
        for key in ("label_column", "positive_label", "sensitive_column"):
            if key not in d:
                raise DataError("config", f"config is missing {key!r}", column=key)
        return cls(**{**d, "base_dir": d.get("base_dir", base_dir)})

    @classmethod
    def from_json(cls, path: str) -> "IngestConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "base_dir"}
        return d

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))


# -- raw readers -------------------------------------------------------------

GERMAN_COLUMNS = [
    "checking_status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status", "other_debtors",
    "residence_since", "property", "age", "other_installment_plans", "housing",
    "existing_credits", "job", "people_liable", "telephone", "foreign_worker",
    "credit_risk",
]

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country", "income",
]

COMPAS_COLUMNS = [
    "sex", "age", "age_cat", "race", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "priors_count", "c_charge_degree", "c_charge_desc",
    "two_year_recid",
]


def _sources(cfg: IngestConfig) -> list[str]:
    src = cfg.source
    if src is None:
        raise DataError("config", "config has no 'source'")
    paths = [src] if isinstance(src, str) else list(src)
    paths = [cfg.resolve(p) for p in paths]
    for p in paths:
        if not os.path.isfile(p):
            raise DataError("missing_file", f"cannot read {p}")
    return paths


def read_csv(cfg):
    return pd.read_csv(_sources(cfg)[0], na_values=cfg.na_values, skipinitialspace=True)


def read_uci_german(cfg):
    return pd.read_csv(_sources(cfg)[0], sep=" ", header=None, names=GERMAN_COLUMNS)


def read_uci_adult(cfg):
    train_path, test_path = _sources(cfg)
    kw = dict(header=None, names=ADULT_COLUMNS, skipinitialspace=True, na_values=cfg.na_values)
    train = pd.read_csv(train_path, **kw)
    test = pd.read_csv(test_path, skiprows=1, **kw)
    train["__split__"] = "train"
    test["__split__"] = "test"
    df = pd.concat([train, test], ignore_index=True)
    df["income"] = df["income"].str.rstrip(".")
    return df


def read_propublica_compas(cfg):
    df = pd.read_csv(_sources(cfg)[0])
    keep = (
        df.days_b_screening_arrest.between(-30, 30)
        & (df.is_recid != -1)
        & (df.c_charge_degree != "O")
        & (df.score_text != "N/A")
    )
    return df.loc[keep, COMPAS_COLUMNS].reset_index(drop=True)


READERS = {
    "csv": read_csv,
    "uci_german": read_uci_german,
    "uci_adult": read_uci_adult,
    "propublica_compas": read_propublica_compas,
}


# -- frame -> arrays ---------------------------------------------------------

def _require(df, column):
    if column not in df.columns:
        raise DataError("missing_column", f"column {column!r} not found", column=column)


def binarize_label(values: pd.Series, cfg: IngestConfig) -> np.ndarray:
    if cfg.label_threshold is not None:
        above = pd.to_numeric(values).to_numpy() > cfg.label_threshold
        if cfg.positive_label not in ("above", "below"):
            raise DataError("config", "with label_threshold, positive_label must be 'above' or 'below'")
        return (above if cfg.positive_label == "above" else ~above).astype(np.int64)
    distinct = pd.unique(values)
    if len(distinct) != 2:
        raise DataError(
            "non_binary_label",
            f"label column {cfg.label_column!r} has {len(distinct)} distinct values",
            column=cfg.label_column,
        )
    if cfg.positive_label not in set(distinct.tolist()):
        raise DataError("label", f"positive_label {cfg.positive_label!r} not present", column=cfg.label_column)
    return (values.to_numpy() == cfg.positive_label).astype(np.int64)


def binarize_sensitive(values: pd.Series, cfg: IngestConfig) -> np.ndarray:
    if cfg.sensitive_threshold is not None:
        return (pd.to_numeric(values).to_numpy() > cfg.sensitive_threshold).astype(np.int64)
    if cfg.sensitive_positive is not None:
        return (values.to_numpy() == cfg.sensitive_positive).astype(np.int64)
    distinct = sorted(pd.unique(values).tolist())
    if distinct not in ([0, 1], [0], [1]):
        raise DataError(
            "sensitive",
            f"sensitive column {cfg.sensitive_column!r} is not 0/1; give a threshold or sensitive_positive",
            column=cfg.sensitive_column,
        )
    return values.to_numpy().astype(np.int64)


def encode_features(df: pd.DataFrame, categorical: Sequence[str] | None = None):
    """One-hot encode categorical columns (no reference level dropped).

    Category vocabularies are taken from the whole frame so every split shares
    one column layout; only the vocabulary, never a statistic, crosses splits.
    """
    if categorical is None:
        categorical = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    blocks, names = [], []
    for col in df.columns:
        if col in categorical:
            levels = sorted(pd.unique(df[col].astype(str)))
            vals = df[col].astype(str).to_numpy()
            for lev in levels:
                blocks.append((vals == lev).astype(float))
                names.append(f"{col}={lev}")
        else:
            blocks.append(pd.to_numeric(df[col]).to_numpy(dtype=float))
            names.append(col)
    x = np.column_stack(blocks) if blocks else np.zeros((len(df), 0))
    return x, names


def split_indices(n: int, fractions: Sequence[float], seed: int):
    """Seeded shuffle then contiguous cut. Returns (train_idx, val_idx, test_idx)."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("config", f"split fractions must be three values summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n + 0.5))
    n_val = int(np.floor(fractions[1] * n + 0.5))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def _predefined_split(labels: np.ndarray, spec: dict, seed: int):
    idx = {r: np.flatnonzero(labels == r) for r in ROLES}
    if len(idx["val"]) == 0 and spec.get("val_fraction"):
        pool = idx["train"]
        perm = np.random.default_rng(seed).permutation(len(pool))
        n_train = int(np.floor((1 - spec["val_fraction"]) * len(pool) + 0.5))
        idx["train"] = pool[perm[:n_train]]
        idx["val"] = pool[perm[n_train:]]
    return idx["train"], idx["val"], idx["test"]


def check_subgroups(ds: Dataset) -> None:
    counts = ds.group_counts()
    empty = [k for k, v in counts.items() if v == 0]
    if empty:
        raise DataError("empty_subgroup", f"{ds.role} split has empty (a, y) cells: {empty}")


@dataclass
class Prepared:
    train: Dataset
    val: Dataset
    test: Dataset
    metadata: dict

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def load_dataset(source, config: IngestConfig | dict | None = None) -> Prepared:
    """Read, encode, split and standardize a dataset.

    ``source`` is a built-in dataset id (``german``, ``adult``, ``compas``,
    ``crime``), a JSON ingestion config path, or a CSV path (then ``config`` is
    required). Returns the three splits plus a metadata dict.
    """
    if isinstance(config, dict):
        config = IngestConfig.from_dict(config)
    if config is None:
        if isinstance(source, str) and source in BUILTIN:
            config = builtin_config(source)
        elif isinstance(source, str) and source.endswith(".json"):
            config = IngestConfig.from_json(source)
        else:
            raise DataError("config", f"no ingestion config for {source!r}")
    elif isinstance(source, str) and source not in BUILTIN and not source.endswith(".json"):
        config.source = source
    cfg = config

    if cfg.reader not in READERS:
        raise DataError("config", f"unknown reader {cfg.reader!r}")
    df = READERS[cfg.reader](cfg)
    for col in (cfg.label_column, cfg.sensitive_column):
        _require(df, col)

    dropped = [c for c in df.columns if any(fnmatch.fnmatchcase(c, p) for p in cfg.drop_columns)]
    protected = {cfg.label_column, cfg.sensitive_column, "__split__"}
    df = df.drop(columns=[c for c in dropped if c not in protected])
    df = df.dropna().reset_index(drop=True)

    y = binarize_label(df[cfg.label_column], cfg)
    a = binarize_sensitive(df[cfg.sensitive_column], cfg)
    exclude = {cfg.label_column, "__split__"}
    if not cfg.include_sensitive:
        exclude.add(cfg.sensitive_column)
    feats = df[[c for c in df.columns if c not in exclude]]
    x_raw, names = encode_features(feats, cfg.categorical_columns)

    split = cfg.split
    if "predefined" in split:
        _require(df, split["predefined"])
        parts = _predefined_split(df[split["predefined"]].to_numpy(), split, cfg.seed)
    else:
        parts = split_indices(len(df), split.get("fractions", [0.6, 0.2, 0.2]), cfg.seed)

    x_train, (x_val, x_test), stats = standardize(x_raw[parts[0]], x_raw[parts[1]], x_raw[parts[2]])
    sets = []
    for role, idx, xs in zip(ROLES, parts, (x_train, x_val, x_test)):
        ds = Dataset(xs, y[idx], a[idx], role, names, stats.mean, stats.std)
        check_subgroups(ds)
        sets.append(ds)

    meta = {
        "n_total": int(len(df)),
        "sizes": {r: s.n for r, s in zip(ROLES, sets)},
        "d": len(names),
        "seed": int(cfg.seed),
        "positive_rates": {r: list(s.positive_rates()) for r, s in zip(ROLES, sets)},
        "group_counts": {r: s.group_counts() for r, s in zip(ROLES, sets)},
        "feature_names": names,
        "config": cfg.to_dict(),
    }
    return Prepared(*sets, metadata=meta)


# -- built-in benchmark configs ----------------------------------------------

DATA_DIR = os.environ.get(
    "FAIR_REWEIGH_DATA",
    os.path.normpath(os.path.join(os.path.dirname(__file__), "..", "..", "data", "raw")),
)

BUILTIN = {
    "german": dict(
        reader="uci_german", source="german.data",
        label_column="credit_risk", positive_label=1,
        sensitive_column="age", sensitive_threshold=30,
        l2_total=5.85,
    ),
    "adult": dict(
        reader="uci_adult", source=["adult.data", "adult.test"],
        label_column="income", positive_label=">50K",
        sensitive_column="sex", sensitive_positive="Male",
        split={"predefined": "__split__", "val_fraction": 0.25},
        l2_total=2.26,
    ),
    "compas": dict(
        reader="propublica_compas", source="compas-scores-two-years.csv",
        label_column="two_year_recid", positive_label=0,
        sensitive_column="race", sensitive_positive="Caucasian",
        l2_total=37.0,
    ),
    "crime": dict(
        reader="csv", source="crime.csv",
        label_column="ViolentCrimesPerPop", positive_label="below", label_threshold=0.3,
        sensitive_column="racepctblack", sensitive_threshold=0.06,
        drop_columns=["communityname", "fold", "state_*", "high_crime", ">0.06black"],
        l2_total=25.79,
    ),
}

# Total (not per-sample) L2 strength for each benchmark.
DEFAULT_L2 = {name: spec["l2_total"] for name, spec in BUILTIN.items()}


def builtin_config(name: str, data_dir: str | None = None, seed: int = 42) -> IngestConfig:
    if name not in BUILTIN:
        raise DataError("config", f"unknown dataset {name!r}; choose from {sorted(BUILTIN)}")
    spec = {k: v for k, v in BUILTIN[name].items() if k != "l2_total"}
    return IngestConfig.from_dict({**spec, "seed": seed}, base_dir=data_dir or DATA_DIR)


# -- prepared-directory round trip -------------------------------------------

def _write_split(path, ds: Dataset):
    df = pd.DataFrame(ds.x, columns=ds.feature_names)
    df["__y__"] = ds._y
    df["__a__"] = ds._a
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def save_prepared(prepared: Prepared, out_dir: str) -> list[str]:
    """Write train/val/test CSVs plus metadata.json; returns the written paths."""
    from .io import atomic_write_text

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for ds in prepared:
        p = os.path.join(out_dir, f"{ds.role}.csv")
        tmp = p + ".tmp"
        _write_split(tmp, ds)
        os.replace(tmp, p)
        paths.append(p)
    meta = dict(prepared.metadata)
    meta["standardization"] = {
        "mean": prepared.train.mean.tolist(),
        "std": prepared.train.std.tolist(),
    }
    p = os.path.join(out_dir, "metadata.json")
    atomic_write_text(p, json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    paths.append(p)
    return paths


def load_prepared(out_dir: str) -> Prepared:
    with open(os.path.join(out_dir, "metadata.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    mean = np.asarray(meta["standardization"]["mean"])
    std = np.asarray(meta["standardization"]["std"])
    sets = []
    for role in ROLES:
        df = pd.read_csv(os.path.join(out_dir, f"{role}.csv"), float_precision="round_trip")
        y = df.pop("__y__").to_numpy()
        a = df.pop("__a__").to_numpy()
        sets.append(Dataset(df.to_numpy(dtype=float), y, a, role, list(df.columns), mean, std))
    return Prepared(*sets, metadata=meta)
