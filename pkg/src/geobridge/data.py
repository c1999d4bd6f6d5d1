"""Dataset schema, CSV ingestion, standardisation statistics, split plans and synthetic data."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

REGION_NAMES = (
    "Alpine", "Atlantic", "Black Sea", "Boreal",
    "Continental", "Mediterranean", "Pannonian", "Steppic",
)

LEVEL1_CLASSES = (
    "Woodland/Shrubland", "Grassland", "Bare land and lichens/moss", "Wetlands",
    "Artificial land", "Water", "Cropland",
)

LEVEL2_CLASSES = (
    "Bare arable land", "Common wheat", "Durum wheat", "Barley", "Rye", "Oats", "Maize",
    "Potatoes", "Sugar beet", "Other roots crops", "Rape and turnip rape",
    "Other non-permanent industrial crops", "Dry pulses, vegetables and flowers",
    "Other fodder crops", "Other cereals", "Sunflower", "Soya", "Triticale", "Rice",
)

STD_FLOOR = 1e-8


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ClassScheme:
    names: tuple

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError("a class scheme needs at least two classes")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def level1(cls):
        return cls(LEVEL1_CLASSES)

    @classmethod
    def level2(cls):
        return cls(LEVEL2_CLASSES)

    @classmethod
    def generic(cls, n: int):
        return cls(tuple(f"class_{k}" for k in range(n)))

    @classmethod
    def from_spec(cls, spec: str):
        """``level1``, ``level2``, an integer count, or a comma-separated name list."""
        s = str(spec).strip()
        if s.lower() == "level1":
            return cls.level1()
        if s.lower() == "level2":
            return cls.level2()
        if s.isdigit():
            return cls.generic(int(s))
        return cls(tuple(n.strip() for n in s.split(",")))


@dataclass(frozen=True)
class RegionScheme:
    """Ordered biogeographical regions; the default is the canonical eight."""

    names: tuple = REGION_NAMES

    @property
    def num_regions(self) -> int:
        return len(self.names)

    def index(self, token: str) -> int:
        t = token.strip()
        if t.lstrip("-").isdigit():
            k = int(t)
            if not 0 <= k < self.num_regions:
                raise KeyError(t)
            return k
        key = t.lower().replace("_", " ")
        for k, name in enumerate(self.names):
            if name.lower() == key or name.lower().replace(" ", "") == key.replace(" ", ""):
                return k
        raise KeyError(t)


@dataclass
class Sample:
    id: str
    features: np.ndarray
    lat: float
    lon: float
    region: int
    label: int


@dataclass
class Dataset:
    ids: list
    features: np.ndarray  # (N, F)
    lat: np.ndarray
    lon: np.ndarray
    region: np.ndarray
    label: np.ndarray
    class_scheme: ClassScheme
    region_scheme: RegionScheme = field(default_factory=RegionScheme)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.lat = np.asarray(self.lat, dtype=np.float64)
        self.lon = np.asarray(self.lon, dtype=np.float64)
        self.region = np.asarray(self.region, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features must be ({n}, F), got {self.features.shape}")
        for name in ("lat", "lon", "region", "label"):
            if getattr(self, name).shape != (n,):
                raise DatasetError(f"{name} must have length {n}")
        if n and (self.label.min() < 0 or self.label.max() >= self.class_scheme.num_classes):
            raise DatasetError("label out of range for class scheme")
        if n and (self.region.min() < 0 or self.region.max() >= self.region_scheme.num_regions):
            raise DatasetError("region out of range for region scheme")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> Sample:
        return Sample(self.ids[i], self.features[i], float(self.lat[i]), float(self.lon[i]),
                      int(self.region[i]), int(self.label[i]))

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset([self.ids[i] for i in idx], self.features[idx], self.lat[idx],
                       self.lon[idx], self.region[idx], self.label[idx],
                       self.class_scheme, self.region_scheme)

    def regions_present(self):
        return sorted(set(int(r) for r in self.region))


# --------------------------------------------------------------------------
# CSV


def _header(F: int):
    return ["id", "lat", "lon", "region", "label"] + [f"f{k}" for k in range(F)]


def _parse_float(tok: str, row: int, col: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DatasetError(f"row {row}: column {col!r} is not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise DatasetError(f"row {row}: column {col!r} is not finite: {tok!r}")
    return v


def load_dataset(path, class_scheme: ClassScheme, region_scheme: RegionScheme | None = None) -> Dataset:
    """Read ``id,lat,lon,region,label,f0..f{F-1}``.  Row numbers in errors count the header as row 1."""
    region_scheme = region_scheme or RegionScheme()
    C = class_scheme.num_classes
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        fixed = ["id", "lat", "lon", "region", "label"]
        missing = [c for c in fixed if c not in header]
        if missing or header[:5] != fixed:
            raise DatasetError(f"{path}: header must start with {','.join(fixed)}; missing {missing}")
        fcols = header[5:]
        if not fcols:
            raise DatasetError(f"{path}: no feature columns")
        if fcols != [f"f{k}" for k in range(len(fcols))]:
            raise DatasetError(f"{path}: feature columns must be f0..f{len(fcols) - 1}")
        ids, feats, lat, lon, reg, lab = [], [], [], [], [], []
        width = len(header)
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DatasetError(f"row {rowno}: expected {width} fields, got {len(row)}")
            ids.append(row[0])
            la = _parse_float(row[1], rowno, "lat")
            lo = _parse_float(row[2], rowno, "lon")
            if abs(la) > 90 or abs(lo) > 180:
                raise DatasetError(f"row {rowno}: coordinates out of range ({la}, {lo})")
            lat.append(la)
            lon.append(lo)
            try:
                reg.append(region_scheme.index(row[3]))
            except KeyError:
                raise DatasetError(f"row {rowno}: unknown region {row[3]!r}") from None
            try:
                y = int(row[4])
            except ValueError:
                raise DatasetError(f"row {rowno}: label {row[4]!r} is not an integer") from None
            if not 0 <= y < C:
                raise DatasetError(f"row {rowno}: label {y} outside [0, {C - 1}]")
            lab.append(y)
            feats.append([_parse_float(t, rowno, c) for t, c in zip(row[5:], fcols)])
    if not ids:
        raise DatasetError(f"{path}: no samples")
    return Dataset(ids, np.array(feats), lat, lon, reg, lab, class_scheme, region_scheme)


def write_dataset(ds: Dataset, path, region_names: bool = True) -> None:
    """Write ``ds`` as CSV; floats use ``repr`` so reloading is exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_header(ds.num_features))
        for i in range(len(ds)):
            r = int(ds.region[i])
            w.writerow([ds.ids[i], repr(float(ds.lat[i])), repr(float(ds.lon[i])),
                        ds.region_scheme.names[r] if region_names else r, int(ds.label[i])]
                       + [repr(float(v)) for v in ds.features[i]])


# --------------------------------------------------------------------------
# standardisation


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def is_identity(self) -> bool:
        return bool(np.all(self.mean == 0.0) and np.all(self.std == 1.0))


def compute_stats(train: Dataset) -> FeatureStats:
    """Per-feature mean and population std (floored at 1e-8)."""
    if len(train) == 0:
        raise DatasetError("cannot compute statistics on an empty training set")
    x = train.features
    return FeatureStats(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


# --------------------------------------------------------------------------
# split plans


@dataclass
class Fold:
    name: str
    train: np.ndarray
    test: np.ndarray


@dataclass
class SplitPlan:
    kind: str  # "extrap" | "loro"
    seed: int | None
    folds: list

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "seed": self.seed,
            "folds": [{"name": f.name, "train": [int(i) for i in f.train],
                       "test": [int(i) for i in f.test]} for f in self.folds],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        folds = [Fold(f["name"], np.array(f["train"], dtype=np.int64),
                      np.array(f["test"], dtype=np.int64)) for f in d["folds"]]
        return cls(d["kind"], d["seed"], folds)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitPlan":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def fold(self, name: str) -> Fold:
        for f in self.folds:
            if f.name == name:
                return f
        raise KeyError(name)


def split_extrap(ds: Dataset, ratio: float = 0.75, seed: int = 0, stratified: bool = False) -> SplitPlan:
    """Random ``ratio`` / ``1-ratio`` split; the first ``floor(ratio*N)`` of a permutation train."""
    n = len(ds)
    if n < 4:
        raise DatasetError(f"need at least 4 samples for an extrapolation split, got {n}")
    rng = np.random.default_rng(seed)
    if not stratified:
        perm = rng.permutation(n)
        k = int(math.floor(ratio * n))
        train, test = perm[:k], perm[k:]
    else:
        train, test = [], []
        for c in range(ds.class_scheme.num_classes):
            idx = np.flatnonzero(ds.label == c)
            idx = idx[rng.permutation(idx.size)]
            k = int(math.floor(ratio * idx.size))
            train.append(idx[:k])
            test.append(idx[k:])
        train = np.concatenate(train)
        test = np.concatenate(test)
    return SplitPlan("extrap", seed, [Fold("extrap", np.sort(train), np.sort(test))])


def split_loro(ds: Dataset) -> SplitPlan:
    """One fold per region present, in canonical order: that region is the test set."""
    present = ds.regions_present()
    if len(present) < 2:
        raise DatasetError("leave-one-region-out needs at least two regions")
    folds = []
    for r, name in enumerate(ds.region_scheme.names):
        if r not in present:
            logger.warning("region %s has no samples; skipping its fold", name)
            continue
        mask = ds.region == r
        folds.append(Fold(name, np.flatnonzero(~mask), np.flatnonzero(mask)))
    return SplitPlan("loro", None, folds)


# --------------------------------------------------------------------------
# synthetic data

# Europe-ish bounding box for synthetic coordinates
EU_LAT = (35.0, 70.0)
EU_LON = (-10.0, 40.0)


@dataclass
class SynthSpec:
    n_classes: int = 3
    n_regions: int = 2
    n_features: int = 10
    samples_per_cell: int = 500
    class_means: np.ndarray | None = None  # (C, F); drawn from N(0, separation^2) if None
    region_shift: np.ndarray | None = None  # (R, F); zeros if None
    noise_std: float = 1.0
    separation: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "n_regions", "n_features", "samples_per_cell"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_regions > len(REGION_NAMES):
            raise ValueError(f"at most {len(REGION_NAMES)} regions")


def region_boxes(n_regions: int):
    """Disjoint ``(lat_lo, lat_hi, lon_lo, lon_hi)`` boxes tiling the EU box, with gaps."""
    cols = int(math.ceil(math.sqrt(n_regions)))
    rows = int(math.ceil(n_regions / cols))
    dlat = (EU_LAT[1] - EU_LAT[0]) / rows
    dlon = (EU_LON[1] - EU_LON[0]) / cols
    boxes = []
    for r in range(n_regions):
        i, j = divmod(r, cols)
        lat0 = EU_LAT[0] + i * dlat
        lon0 = EU_LON[0] + j * dlon
        boxes.append((lat0 + 0.05 * dlat, lat0 + 0.95 * dlat, lon0 + 0.05 * dlon, lon0 + 0.95 * dlon))
    return boxes


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Features ``class_mean[y] + region_shift[r] + noise``; coordinates uniform in per-region boxes."""
    rng = np.random.default_rng(spec.seed)
    C, R, F = spec.n_classes, spec.n_regions, spec.n_features
    means = spec.class_means
    if means is None:
        means = rng.normal(0.0, spec.separation, size=(C, F))
    shift = spec.region_shift if spec.region_shift is not None else np.zeros((R, F))
    means = np.asarray(means, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if means.shape != (C, F) or shift.shape != (R, F):
        raise ValueError("class_means must be (C, F) and region_shift (R, F)")
    boxes = region_boxes(R)
    m = spec.samples_per_cell
    labels = np.repeat(np.tile(np.arange(C), R), m)
    regions = np.repeat(np.repeat(np.arange(R), C), m)
    n = labels.size
    noise = rng.normal(0.0, spec.noise_std, size=(n, F)) if spec.noise_std > 0 else np.zeros((n, F))
    feats = means[labels] + shift[regions] + noise
    lo = np.array(boxes)
    lat = rng.uniform(lo[regions, 0], lo[regions, 1])
    lon = rng.uniform(lo[regions, 2], lo[regions, 3])
    perm = rng.permutation(n)
    ids = [f"s{k:06d}" for k in range(n)]
    return Dataset(ids, feats[perm], lat[perm], lon[perm], regions[perm], labels[perm],
                   ClassScheme.generic(C), RegionScheme(REGION_NAMES[:R]))


def region_shift_spec(n_classes=3, n_regions=2, n_features=10, samples_per_cell=500,
                      step=4.0, noise_std=1.0, seed=0) -> SynthSpec:
    """Class means on a line, regions shifting them along it by one class step.

    Class ``c`` in region ``r`` sits where class ``c + r`` sits in region 0,
    so features alone are ambiguous and only location resolves the overlap.
    """
    rng = np.random.default_rng(seed + 10_000)
    direction = rng.normal(size=n_features)
    direction /= np.linalg.norm(direction)
    means = step * np.arange(n_classes)[:, None] * direction[None, :]
    shift = step * np.arange(n_regions)[:, None] * direction[None, :]
    return SynthSpec(n_classes, n_regions, n_features, samples_per_cell, means, shift,
                     noise_std, seed=seed)
