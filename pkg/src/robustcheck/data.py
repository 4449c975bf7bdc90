"""Dataset ingestion, preprocessing and the Swiss-roll manifold helpers.

Preprocessing is strictly fit-on-train: the scaler, the correlated-feature
filter and the one-hot encoding layout are derived from the training split
only and then applied unchanged to validation and test. The resulting
`FeatureCodec` is the single source of truth for moving between the three
representations used downstream:

  raw        typed columns as read from CSV
  collapsed  one value per original feature (standardized numerics,
             integer modality codes for categoricals)
  encoded    model input space (numerics + one-hot blocks)
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .robustness import spearman_rho

logger = logging.getLogger(__name__)

SIDE_CAR_VERSION = 1

KIND_NUMERIC = "numeric"
KIND_CATEGORICAL = "categorical"
KIND_LABEL = "label"
_KINDS = (KIND_NUMERIC, KIND_CATEGORICAL, KIND_LABEL)

NUMERIC_CORRELATION_THRESHOLD = 0.9
CATEGORICAL_NMI_THRESHOLD = 0.9


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    modalities: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.modalities is not None:
            mods = tuple(str(m) for m in self.modalities)
            if not mods:
                raise ConfigError(f"column {self.name!r}: empty modality list")
            if len(set(mods)) != len(mods):
                raise ConfigError(f"column {self.name!r}: duplicate modalities")
            object.__setattr__(self, "modalities", mods)


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate column names in schema")
        labels = [c for c in cols if c.kind == KIND_LABEL]
        if len(labels) != 1:
            raise ConfigError(f"schema must have exactly one label column, got {len(labels)}")
        object.__setattr__(self, "columns", cols)

    @property
    def label(self) -> ColumnSpec:
        return next(c for c in self.columns if c.kind == KIND_LABEL)

    @property
    def features(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.kind != KIND_LABEL)

    def to_json_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.modalities is not None:
                entry["modalities"] = list(c.modalities)
            cols.append(entry)
        return {"columns": cols}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FeatureSchema":
        try:
            cols = tuple(
                ColumnSpec(
                    name=str(c["name"]),
                    kind=str(c["kind"]),
                    modalities=tuple(c["modalities"]) if "modalities" in c else None,
                )
                for c in doc["columns"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schema document: {exc}") from exc
        return cls(columns=cols)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "FeatureSchema":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"schema file not found: {path}")
        return cls.from_json_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RawTable:
    schema: FeatureSchema
    data: dict[str, np.ndarray]  # numeric -> float64, categorical/label -> str

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.data.values())))

    def subset(self, indices: np.ndarray) -> "RawTable":
        return RawTable(
            schema=self.schema,
            data={name: col[indices] for name, col in self.data.items()},
        )


def load_csv(path: str | Path, schema: FeatureSchema) -> RawTable:
    """Read a header-first CSV into typed columns, strictly.

    Strict means: the header must carry exactly the schema's column names,
    numeric cells must parse, no cell may be empty, and categorical cells
    must belong to the declared modalities when the schema declares any.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        expected = {c.name for c in schema.columns}
        if set(header) != expected:
            raise DataError(
                f"{path}: header {header} does not match schema columns "
                f"{sorted(expected)}"
            )
        col_idx = {name: header.index(name) for name in header}
        raw_cols: dict[str, list] = {c.name: [] for c in schema.columns}
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            for col in schema.columns:
                cell = row[col_idx[col.name]]
                if cell == "":
                    raise DataError(
                        f"{path}: row {row_no}, column {col.name!r}: missing value"
                    )
                if col.kind == KIND_NUMERIC:
                    try:
                        raw_cols[col.name].append(float(cell))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {row_no}, column {col.name!r}: "
                            f"cannot parse {cell!r} as numeric"
                        ) from None
                else:
                    if col.modalities is not None and cell not in col.modalities:
                        raise DataError(
                            f"{path}: row {row_no}, column {col.name!r}: "
                            f"unknown category {cell!r}"
                        )
                    raw_cols[col.name].append(cell)
    data = {}
    for col in schema.columns:
        if col.kind == KIND_NUMERIC:
            data[col.name] = np.asarray(raw_cols[col.name], dtype=np.float64)
        else:
            data[col.name] = np.asarray(raw_cols[col.name], dtype=object)
    table = RawTable(schema=schema, data=data)
    logger.info("loaded %s: %d rows, %d columns", path.name, table.n_rows, len(header))
    return table


def write_csv(path: str | Path, table: RawTable) -> None:
    """Write a RawTable back out with schema column order, round-trip floats."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        names = [c.name for c in table.schema.columns]
        writer.writerow(names)
        cols = [table.data[n] for n in names]
        kinds = [c.kind for c in table.schema.columns]
        for i in range(table.n_rows):
            writer.writerow(
                [
                    repr(float(col[i])) if kind == KIND_NUMERIC else str(col[i])
                    for col, kind in zip(cols, kinds)
                ]
            )


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint, exhaustive train/valid/test partition, as fractions or counts."""

    train: float
    valid: float
    test: float
    seed: int = 0

    def __post_init__(self):
        parts = (self.train, self.valid, self.test)
        if any(p < 0 for p in parts):
            raise ConfigError("split parts must be non-negative")
        if all(float(p).is_integer() and p > 1 for p in parts):
            return  # counts
        if not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise ConfigError("split fractions must sum to 1")

    @property
    def as_counts(self) -> bool:
        return all(float(p).is_integer() and p > 1 for p in (self.train, self.valid, self.test))

    def resolve(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.as_counts:
            n_train, n_valid, n_test = int(self.train), int(self.valid), int(self.test)
            if n_train + n_valid + n_test != n:
                raise ConfigError(
                    f"split counts {n_train}+{n_valid}+{n_test} do not sum to "
                    f"the {n} available rows"
                )
        else:
            n_train = int(round(self.train * n))
            n_valid = int(round(self.valid * n))
            n_test = n - n_train - n_valid
            if min(n_train, n_valid, n_test) <= 0:
                raise ConfigError("each split must receive at least one row")
        order = np.random.default_rng(self.seed).permutation(n)
        return (
            np.sort(order[:n_train]),
            np.sort(order[n_train : n_train + n_valid]),
            np.sort(order[n_train + n_valid :]),
        )


# ---------------------------------------------------------------------------
# correlation statistics
# ---------------------------------------------------------------------------


def normalized_mutual_information(codes_a: np.ndarray, codes_b: np.ndarray) -> float:
    """NMI with arithmetic-mean normalization of the marginal entropies.

    Returns nan when either variable is constant (zero entropy), which
    callers must treat as a degenerate comparison.
    """
    a = np.asarray(codes_a)
    b = np.asarray(codes_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be aligned 1-d code vectors")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = ai.max() + 1, bi.max() + 1
    joint = np.bincount(ai * kb + bi, minlength=ka * kb).reshape(ka, kb) / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    ha = -np.sum(pa[pa > 0] * np.log(pa[pa > 0]))
    hb = -np.sum(pb[pb > 0] * np.log(pb[pb > 0]))
    denom = 0.5 * (ha + hb)
    if denom <= 0.0:
        return float("nan")
    nz = joint > 0
    mi = np.sum(joint[nz] * np.log(joint[nz] / (pa[:, None] * pb[None, :])[nz]))
    return float(max(mi, 0.0) / denom)


def correlation_stats(col_a: np.ndarray, col_b: np.ndarray, kind: str) -> float:
    """Within-kind dependence statistic: Spearman rho or NMI, symmetric."""
    if kind == KIND_NUMERIC:
        return spearman_rho(col_a, col_b)
    if kind == KIND_CATEGORICAL:
        return normalized_mutual_information(col_a, col_b)
    raise ValueError(f"no correlation statistic for kind {kind!r}")


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DroppedFeature:
    name: str
    reason: str  # zero_variance | single_modality | correlated
    statistic: float
    partner: str | None = None


@dataclass(frozen=True)
class FeatureCodec:
    """Fitted feature transformations shared by all splits of one run."""

    features: tuple[ColumnSpec, ...]  # kept features, schema order, modalities resolved
    numeric_stats: dict[str, tuple[float, float]]  # name -> (mean, std) from train
    label_classes: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.features)

    @property
    def numeric_mask(self) -> np.ndarray:
        return np.array([c.kind == KIND_NUMERIC for c in self.features], dtype=bool)

    @property
    def modality_counts(self) -> np.ndarray:
        return np.array(
            [len(c.modalities) if c.kind == KIND_CATEGORICAL else 0 for c in self.features],
            dtype=int,
        )

    @property
    def encoding_ranges(self) -> tuple[tuple[int, int], ...]:
        """Contiguous encoded-column range per kept feature, in feature order."""
        ranges = []
        start = 0
        for c in self.features:
            width = 1 if c.kind == KIND_NUMERIC else len(c.modalities)
            ranges.append((start, start + width))
            start += width
        return tuple(ranges)

    @property
    def n_encoded(self) -> int:
        return self.encoding_ranges[-1][1] if self.features else 0

    def raw_to_collapsed(self, data: dict[str, np.ndarray]) -> np.ndarray:
        n = len(next(iter(data.values())))
        out = np.empty((n, self.n_features), dtype=np.float64)
        for j, col in enumerate(self.features):
            if col.kind == KIND_NUMERIC:
                mean, std = self.numeric_stats[col.name]
                out[:, j] = (np.asarray(data[col.name], dtype=np.float64) - mean) / std
            else:
                lookup = {m: i for i, m in enumerate(col.modalities)}
                try:
                    out[:, j] = [lookup[v] for v in data[col.name]]
                except KeyError as exc:
                    raise DataError(
                        f"column {col.name!r}: unknown category {exc.args[0]!r}"
                    ) from None
        return out

    def encode(self, collapsed: np.ndarray) -> np.ndarray:
        collapsed = np.atleast_2d(np.asarray(collapsed, dtype=np.float64))
        out = np.zeros((collapsed.shape[0], self.n_encoded), dtype=np.float64)
        for j, (col, (start, stop)) in enumerate(zip(self.features, self.encoding_ranges)):
            if col.kind == KIND_NUMERIC:
                out[:, start] = collapsed[:, j]
            else:
                codes = collapsed[:, j].astype(int)
                if codes.min() < 0 or codes.max() >= stop - start:
                    raise ValueError(f"modality code out of range for {col.name!r}")
                out[np.arange(collapsed.shape[0]), start + codes] = 1.0
        return out

    def collapse(self, encoded: np.ndarray) -> np.ndarray:
        encoded = np.atleast_2d(np.asarray(encoded, dtype=np.float64))
        if encoded.shape[1] != self.n_encoded:
            raise ValueError(
                f"encoded width {encoded.shape[1]} does not match codec "
                f"({self.n_encoded})"
            )
        out = np.empty((encoded.shape[0], self.n_features), dtype=np.float64)
        for j, (col, (start, stop)) in enumerate(zip(self.features, self.encoding_ranges)):
            if col.kind == KIND_NUMERIC:
                out[:, j] = encoded[:, start]
            else:
                out[:, j] = np.argmax(encoded[:, start:stop], axis=1)
        return out

    def labels_to_codes(self, labels: np.ndarray) -> np.ndarray:
        lookup = {m: i for i, m in enumerate(self.label_classes)}
        try:
            return np.array([lookup[v] for v in labels], dtype=int)
        except KeyError as exc:
            raise DataError(f"unknown class label {exc.args[0]!r}") from None

    @classmethod
    def all_numeric(cls, names, label_classes=("c0", "c1")) -> "FeatureCodec":
        """Identity codec over purely numeric, already-scaled features."""
        return cls(
            features=tuple(ColumnSpec(name=n, kind=KIND_NUMERIC) for n in names),
            numeric_stats={n: (0.0, 1.0) for n in names},
            label_classes=tuple(label_classes),
        )

    def to_json_dict(self) -> dict:
        return {
            "features": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    **({"modalities": list(c.modalities)} if c.modalities else {}),
                }
                for c in self.features
            ],
            "scaler": {
                name: {"mean": mean, "std": std}
                for name, (mean, std) in sorted(self.numeric_stats.items())
            },
            "encoding_map": {
                c.name: [start, stop]
                for c, (start, stop) in zip(self.features, self.encoding_ranges)
            },
            "label_classes": list(self.label_classes),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FeatureCodec":
        features = tuple(
            ColumnSpec(
                name=c["name"],
                kind=c["kind"],
                modalities=tuple(c["modalities"]) if "modalities" in c else None,
            )
            for c in doc["features"]
        )
        stats = {
            name: (entry["mean"], entry["std"]) for name, entry in doc["scaler"].items()
        }
        return cls(
            features=features,
            numeric_stats=stats,
            label_classes=tuple(doc["label_classes"]),
        )


@dataclass(frozen=True)
class EncodedSplit:
    name: str
    row_ids: np.ndarray  # indices into the original raw table
    X: np.ndarray  # (N, n_encoded)
    collapsed: np.ndarray  # (N, n_features)
    y: np.ndarray  # (N,) integer class codes


@dataclass(frozen=True)
class PreprocessResult:
    codec: FeatureCodec
    train: EncodedSplit
    valid: EncodedSplit
    test: EncodedSplit
    dropped: tuple[DroppedFeature, ...]
    degenerate: tuple[str, ...]  # features flagged but kept (zero-entropy on train)

    @property
    def splits(self) -> dict[str, EncodedSplit]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def _resolve_modalities(col: ColumnSpec, values: np.ndarray) -> ColumnSpec:
    if col.modalities is not None:
        return col
    observed = tuple(sorted(set(str(v) for v in values)))
    return ColumnSpec(name=col.name, kind=col.kind, modalities=observed)


def preprocess(raw: RawTable, split: SplitSpec) -> PreprocessResult:
    """Fit scaler + correlation filter on the training split, encode all three.

    Degenerate columns go first (zero-variance numerics, single-modality
    categoricals), then the correlated-feature filter removes, within each
    kind, the later column of any pair whose dependence statistic reaches the
    threshold (|Spearman rho| for numerics, NMI for categoricals). The column
    appearing first in schema order is always the one kept.
    """
    schema = raw.schema
    idx_train, idx_valid, idx_test = split.resolve(raw.n_rows)

    # Resolve modality lists (and label classes) on the full table so that
    # every split encodes identically; statistics below use the train rows only.
    resolved = [
        _resolve_modalities(c, raw.data[c.name]) if c.kind != KIND_NUMERIC else c
        for c in schema.features
    ]
    label_col = _resolve_modalities(schema.label, raw.data[schema.label.name])

    dropped: list[DroppedFeature] = []
    degenerate: list[str] = []
    kept: list[ColumnSpec] = []
    stats: dict[str, tuple[float, float]] = {}
    for col in resolved:
        train_vals = raw.data[col.name][idx_train]
        if col.kind == KIND_NUMERIC:
            mean = float(np.mean(train_vals))
            std = float(np.std(train_vals))
            if std < 1e-12:
                dropped.append(DroppedFeature(col.name, "zero_variance", std))
                logger.warning("dropping zero-variance numeric column %r", col.name)
                continue
            stats[col.name] = (mean, std)
        else:
            if len(col.modalities) < 2:
                dropped.append(DroppedFeature(col.name, "single_modality", 1.0))
                logger.warning("dropping single-modality categorical %r", col.name)
                continue
            if len(set(train_vals.tolist())) < 2:
                degenerate.append(col.name)
                logger.warning(
                    "categorical %r is constant on the training split; its "
                    "correlation statistics are degenerate", col.name
                )
        kept.append(col)

    # Correlated-feature removal, within kind, train rows only.
    survivors: list[ColumnSpec] = []
    for col in kept:
        redundant = False
        for prior in survivors:
            if prior.kind != col.kind:
                continue
            if col.name in degenerate or prior.name in degenerate:
                continue
            stat = correlation_stats(
                raw.data[prior.name][idx_train], raw.data[col.name][idx_train], col.kind
            )
            if math.isnan(stat):
                degenerate.append(col.name)
                continue
            threshold = (
                NUMERIC_CORRELATION_THRESHOLD
                if col.kind == KIND_NUMERIC
                else CATEGORICAL_NMI_THRESHOLD
            )
            if abs(stat) >= threshold:
                dropped.append(
                    DroppedFeature(col.name, "correlated", float(stat), partner=prior.name)
                )
                logger.info(
                    "dropping %r: correlated with %r (stat=%.4f)",
                    col.name, prior.name, stat,
                )
                redundant = True
                break
        if not redundant:
            survivors.append(col)

    codec = FeatureCodec(
        features=tuple(survivors),
        numeric_stats={c.name: stats[c.name] for c in survivors if c.kind == KIND_NUMERIC},
        label_classes=label_col.modalities,
    )

    def build(name: str, idx: np.ndarray) -> EncodedSplit:
        sub = {c.name: raw.data[c.name][idx] for c in survivors}
        collapsed = codec.raw_to_collapsed(sub)
        return EncodedSplit(
            name=name,
            row_ids=idx,
            X=codec.encode(collapsed),
            collapsed=collapsed,
            y=codec.labels_to_codes(raw.data[label_col.name][idx]),
        )

    return PreprocessResult(
        codec=codec,
        train=build("train", idx_train),
        valid=build("valid", idx_valid),
        test=build("test", idx_test),
        dropped=tuple(dropped),
        degenerate=tuple(degenerate),
    )


def save_preprocessed(out_dir: str | Path, raw: RawTable, result: PreprocessResult) -> list[Path]:
    """Persist the three splits as raw CSVs plus a JSON sidecar of fitted state."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, split in result.splits.items():
        path = out_dir / f"{name}.csv"
        write_csv(path, raw.subset(split.row_ids))
        written.append(path)
    sidecar = {
        "version": SIDE_CAR_VERSION,
        "codec": result.codec.to_json_dict(),
        "label_column": raw.schema.label.name,
        "dropped_features": [
            {
                "name": d.name,
                "reason": d.reason,
                "statistic": d.statistic,
                **({"partner": d.partner} if d.partner else {}),
            }
            for d in result.dropped
        ],
        "degenerate_features": list(result.degenerate),
        "row_ids": {name: split.row_ids.tolist() for name, split in result.splits.items()},
    }
    path = out_dir / "preprocess.json"
    path.write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    written.append(path)
    return written


def load_preprocessed(out_dir: str | Path) -> PreprocessResult:
    """Rebuild codec and encoded splits from persisted CSVs + sidecar.

    Re-applies the stored transformations; nothing is refitted, so the result
    is bit-identical to what `preprocess` produced.
    """
    out_dir = Path(out_dir)
    sidecar_path = out_dir / "preprocess.json"
    if not sidecar_path.exists():
        from .errors import ArtifactError

        raise ArtifactError(
            f"missing {sidecar_path}; run the preprocess stage first"
        )
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    codec = FeatureCodec.from_json_dict(sidecar["codec"])
    label_name = sidecar["label_column"]
    label_spec = ColumnSpec(
        name=label_name, kind=KIND_LABEL, modalities=tuple(codec.label_classes)
    )
    schema = FeatureSchema(columns=codec.features + (label_spec,))

    splits = {}
    for name in ("train", "valid", "test"):
        table = load_csv(out_dir / f"{name}.csv", schema)
        collapsed = codec.raw_to_collapsed({c.name: table.data[c.name] for c in codec.features})
        splits[name] = EncodedSplit(
            name=name,
            row_ids=np.asarray(sidecar["row_ids"][name], dtype=int),
            X=codec.encode(collapsed),
            collapsed=collapsed,
            y=codec.labels_to_codes(table.data[label_name]),
        )
    return PreprocessResult(
        codec=codec,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        dropped=tuple(
            DroppedFeature(
                name=d["name"],
                reason=d["reason"],
                statistic=d["statistic"],
                partner=d.get("partner"),
            )
            for d in sidecar["dropped_features"]
        ),
        degenerate=tuple(sidecar["degenerate_features"]),
    )


# ---------------------------------------------------------------------------
# Swiss roll
# ---------------------------------------------------------------------------

SWISS_ROLL_T_RANGE = (1.5 * math.pi, 4.5 * math.pi)
SWISS_ROLL_HEIGHT = 21.0


def swiss_roll(
    n: int,
    noise: float = 0.0,
    seed: int = 0,
    t_range: tuple[float, float] = SWISS_ROLL_T_RANGE,
    height: float = SWISS_ROLL_HEIGHT,
    scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample the rolled 2-d sheet (scale*t*cos t, h, scale*t*sin t) + jitter.

    Returns (points, t, h) so callers can verify the parametric identity.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    t = t_range[0] + (t_range[1] - t_range[0]) * rng.random(n)
    h = height * rng.random(n)
    points = np.column_stack((scale * t * np.cos(t), h, scale * t * np.sin(t)))
    if noise > 0:
        points = points + noise * rng.standard_normal((n, 3))
    return points, t, h


def swiss_roll_distance(
    points: np.ndarray,
    t_range: tuple[float, float] = SWISS_ROLL_T_RANGE,
    height: float = SWISS_ROLL_HEIGHT,
    scale: float = 1.0,
    grid: int = 4001,
) -> np.ndarray:
    """Euclidean distance from each point to the bounded ideal roll surface.

    The spiral parameter is located by a dense grid scan refined with golden
    section iterations; the height coordinate only contributes when a point
    falls outside [0, height].
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]

    def planar_sq(tv):
        # tv: (k,) or (n,) broadcast against points
        return (px[:, None] - scale * tv * np.cos(tv)) ** 2 + (
            pz[:, None] - scale * tv * np.sin(tv)
        ) ** 2

    ts = np.linspace(t_range[0], t_range[1], grid)
    d2 = planar_sq(ts[None, :])
    best = np.argmin(d2, axis=1)
    lo = ts[np.maximum(best - 1, 0)]
    hi = ts[np.minimum(best + 1, grid - 1)]
    # golden-section refinement, vectorized over points
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _planar_sq_at(px, pz, c, scale)
    fd = _planar_sq_at(px, pz, d, scale)
    for _ in range(40):
        take_c = fc < fd
        b = np.where(take_c, d, b)
        a = np.where(take_c, a, c)
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = _planar_sq_at(px, pz, c, scale)
        fd = _planar_sq_at(px, pz, d, scale)
    t_star = 0.5 * (a + b)
    planar = _planar_sq_at(px, pz, t_star, scale)
    dy = np.maximum(0.0, np.maximum(-py, py - height))
    return np.sqrt(planar + dy * dy)


def _planar_sq_at(px, pz, tv, scale):
    return (px - scale * tv * np.cos(tv)) ** 2 + (pz - scale * tv * np.sin(tv)) ** 2
