"""Dataset ingestion: ModelNet40 / ScanObjectNN HDF5 archives, XYZ text files,
point subsampling and few-shot episode sampling."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import h5py
import numpy as np
from numpy.typing import NDArray

from .errors import IngestionError, InvalidArgumentError
from .geometry import PointCloud

PathLike = Union[str, Path]

DEFAULT_POINTS = 1024
SAMPLE_STRATEGIES = ("first-n", "random")

MODELNET40_CLASSES = (
    "airplane", "bathtub", "bed", "bench", "bookshelf", "bottle", "bowl", "car",
    "chair", "cone", "cup", "curtain", "desk", "door", "dresser", "flower_pot",
    "glass_box", "guitar", "keyboard", "lamp", "laptop", "mantel", "monitor",
    "night_stand", "person", "piano", "plant", "radio", "range_hood", "sink",
    "sofa", "stairs", "stool", "table", "tent", "toilet", "tv_stand", "vase",
    "wardrobe", "xbox",
)  # fmt: skip

SCANOBJECTNN_CLASSES = (
    "bag", "bin", "box", "cabinet", "chair", "desk", "display", "door",
    "shelf", "table", "bed", "pillow", "sink", "sofa", "toilet",
)  # fmt: skip

# split -> (subdirectory, train file, test file)
SCANOBJECTNN_SPLITS = {
    "OBJ-BG": ("main_split", "training_objectdataset.h5", "test_objectdataset.h5"),
    "OBJ-ONLY": ("main_split_nobg", "training_objectdataset.h5", "test_objectdataset.h5"),
    "PB-T50-RS": (
        "main_split",
        "training_objectdataset_augmentedrot_scale75.h5",
        "test_objectdataset_augmentedrot_scale75.h5",
    ),
}

MODELNET40_HINT = (
    "ModelNet40 not found. Download modelnet40_ply_hdf5_2048.zip (the standard "
    "PointNet HDF5 release), unzip it and pass the extracted directory via --dataset-dir."
)
SCANOBJECTNN_HINT = (
    "ScanObjectNN not found. Request the h5_files release from the ScanObjectNN "
    "authors, unzip it and pass the h5_files directory via --dataset-dir."
)


@dataclass(frozen=True)
class LabeledDataset:
    """Labeled clouds stored as one ``(B, P, 3)`` array."""

    points: NDArray[np.float32]
    labels: NDArray[np.int64]
    class_names: tuple[str, ...]
    split_name: str = ""

    def __post_init__(self) -> None:
        pts = np.asarray(self.points)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise InvalidArgumentError(f"points must be (B, P, 3); got {pts.shape}")
        if labels.size != pts.shape[0]:
            raise InvalidArgumentError(f"{pts.shape[0]} clouds but {labels.size} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise InvalidArgumentError(f"labels must lie in [0, {len(self.class_names)})")
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i: int) -> PointCloud:
        return PointCloud(self.points[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[PointCloud]:
        for i in range(len(self)):
            yield self[i]

    @property
    def clouds(self) -> list[PointCloud]:
        return list(self)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: Sequence[int], split_name: Optional[str] = None) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(
            self.points[idx], self.labels[idx], self.class_names,
            self.split_name if split_name is None else split_name,
        )

    def limit(self, n: Optional[int]) -> "LabeledDataset":
        """Deterministic subsample of at most ``n`` clouds, evenly strided."""
        if n is None or n >= len(self):
            return self
        if n < 1:
            raise InvalidArgumentError("limit must be >= 1")
        idx = np.linspace(0, len(self) - 1, n).round().astype(np.intp)
        return self.subset(np.unique(idx))

    def resample(self, n: int, strategy: str = "first-n", seed: int = 0) -> "LabeledDataset":
        """Apply :func:`sample_points` to every cloud; cloud ``i`` of random mode uses seed ``(seed, i)``."""
        if n > self.points.shape[1]:
            raise InvalidArgumentError(f"cannot sample {n} points from clouds of {self.points.shape[1]}")
        if strategy == "first-n":
            pts = self.points[:, :n]
        elif strategy == "random":
            pts = np.stack([
                self.points[i, _random_rows(self.points.shape[1], n, (seed, i))]
                for i in range(len(self))
            ]) if len(self) else self.points[:, :n]
        else:
            raise InvalidArgumentError(f"unknown sampling strategy {strategy!r}")
        return LabeledDataset(np.ascontiguousarray(pts), self.labels, self.class_names, self.split_name)


def _random_rows(total: int, n: int, seed) -> NDArray[np.intp]:
    return np.random.default_rng(seed).choice(total, size=n, replace=False)


def sample_points(cloud: PointCloud, n: int, strategy: str = "first-n", seed: int = 0) -> PointCloud:
    if n < 1 or n > len(cloud):
        raise InvalidArgumentError(f"cannot sample {n} points from a cloud of {len(cloud)}")
    if strategy == "first-n":
        return PointCloud(cloud.points[:n], cloud.label)
    if strategy == "random":
        return PointCloud(cloud.points[_random_rows(len(cloud), n, seed)], cloud.label)
    raise InvalidArgumentError(f"unknown sampling strategy {strategy!r}")


def read_h5_split(path: PathLike, min_points: int = DEFAULT_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Read the ``data`` / ``label`` pair from one archive file, validating shapes."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: file not found")
    try:
        with h5py.File(path, "r") as fh:
            if "data" not in fh or "label" not in fh:
                raise IngestionError(f"{path}: expected datasets 'data' and 'label'")
            data, label = fh["data"], fh["label"]
            if data.ndim != 3 or data.shape[2] != 3:
                raise IngestionError(f"{path}: 'data' has shape {data.shape}, expected (B, P, 3)")
            if data.dtype.kind != "f":
                raise IngestionError(f"{path}: 'data' has dtype {data.dtype}, expected float")
            if label.dtype.kind not in "iu":
                raise IngestionError(f"{path}: 'label' has dtype {label.dtype}, expected integer")
            if label.shape not in ((data.shape[0],), (data.shape[0], 1)):
                raise IngestionError(
                    f"{path}: 'label' has shape {label.shape}, expected ({data.shape[0]},) "
                    f"or ({data.shape[0]}, 1)"
                )
            if data.shape[1] < min_points:
                raise IngestionError(
                    f"{path}: clouds have {data.shape[1]} points, need at least {min_points}"
                )
            pts = np.asarray(data[...], dtype=np.float32)
            labels = np.asarray(label[...], dtype=np.int64).reshape(-1)
    except OSError as exc:
        raise IngestionError(f"{path}: unreadable HDF5 file ({exc})") from exc
    if not np.all(np.isfinite(pts)):
        raise IngestionError(f"{path}: non-finite coordinates")
    return pts, labels


def _concat(files: Sequence[Path], min_points: int) -> tuple[np.ndarray, np.ndarray]:
    parts = [read_h5_split(f, min_points) for f in files]
    widths = {p.shape[1] for p, _ in parts}
    if len(widths) != 1:
        raise IngestionError(f"files disagree on points per cloud: {sorted(widths)}")
    return np.concatenate([p for p, _ in parts]), np.concatenate([l for _, l in parts])


def _check_labels(labels: np.ndarray, num_classes: int, where: str) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise IngestionError(f"{where}: labels outside [0, {num_classes})")


def _numbered(files: list[Path]) -> list[Path]:
    def key(p: Path):
        m = re.search(r"(\d+)\.h5$", p.name)
        return (int(m.group(1)) if m else -1, p.name)

    return sorted(files, key=key)


def _modelnet_root(root: Path) -> Path:
    for cand in (root, root / "modelnet40_ply_hdf5_2048"):
        if any(cand.glob("ply_data_train*.h5")):
            return cand
    raise IngestionError(f"{root}: no ply_data_train*.h5 files. {MODELNET40_HINT}")


def _modelnet_files(root: Path, split: str) -> list[Path]:
    listing = root / f"{split}_files.txt"
    if listing.is_file():
        files = [root / Path(line.strip()).name for line in listing.read_text().splitlines() if line.strip()]
        missing = [f.name for f in files if not f.is_file()]
        if missing:
            raise IngestionError(f"{listing}: listed files are missing: {', '.join(missing)}")
        return files
    files = _numbered(list(root.glob(f"ply_data_{split}*.h5")))
    if not files:
        raise IngestionError(f"{root}: no ply_data_{split}*.h5 files")
    return files


def load_modelnet40(
    directory: PathLike, min_points: int = DEFAULT_POINTS
) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the ModelNet40 HDF5 release as (train, test)."""
    root = Path(directory)
    if not root.is_dir():
        raise IngestionError(f"{root}: directory not found. {MODELNET40_HINT}")
    root = _modelnet_root(root)
    names_file = root / "shape_names.txt"
    names = MODELNET40_CLASSES
    if names_file.is_file():
        names = tuple(line.strip() for line in names_file.read_text().splitlines() if line.strip())
    out = []
    for split in ("train", "test"):
        pts, labels = _concat(_modelnet_files(root, split), min_points)
        _check_labels(labels, len(names), f"{root} ({split})")
        out.append(LabeledDataset(pts, labels, names, f"modelnet40/{split}"))
    return out[0], out[1]


def load_scanobjectnn(
    directory: PathLike, split: str, min_points: int = DEFAULT_POINTS
) -> tuple[LabeledDataset, LabeledDataset]:
    """Load one official ScanObjectNN variant as (train, test)."""
    if split not in SCANOBJECTNN_SPLITS:
        raise InvalidArgumentError(
            f"unknown ScanObjectNN split {split!r}; expected one of {sorted(SCANOBJECTNN_SPLITS)}"
        )
    root = Path(directory)
    if not root.is_dir():
        raise IngestionError(f"{root}: directory not found. {SCANOBJECTNN_HINT}")
    sub, train_name, test_name = SCANOBJECTNN_SPLITS[split]
    base = next((c / sub for c in (root, root / "h5_files") if (c / sub).is_dir()), None)
    if base is None:
        raise IngestionError(f"{root}: missing subdirectory {sub}/. {SCANOBJECTNN_HINT}")
    out = []
    for part, name in (("train", train_name), ("test", test_name)):
        pts, labels = read_h5_split(base / name, min_points)
        _check_labels(labels, len(SCANOBJECTNN_CLASSES), str(base / name))
        out.append(LabeledDataset(pts, labels, SCANOBJECTNN_CLASSES, f"scanobjectnn/{split}/{part}"))
    return out[0], out[1]


def write_h5_split(path: PathLike, points: np.ndarray, labels: np.ndarray, label_2d: bool = True) -> None:
    """Write a ``data`` / ``label`` archive file in the layout the loaders expect."""
    labels = np.asarray(labels, dtype=np.uint8 if np.max(labels, initial=0) < 256 else np.int64)
    with h5py.File(path, "w") as fh:
        fh.create_dataset("data", data=np.asarray(points, dtype=np.float32))
        fh.create_dataset("label", data=labels.reshape(-1, 1) if label_2d else labels.reshape(-1))


def load_xyz_text(path: PathLike) -> PointCloud:
    """Parse one ``x y z`` triple per line; blank and ``#`` lines are skipped."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise IngestionError(f"{path}:{lineno}: expected 3 values, found {len(parts)}")
            try:
                xyz = [float(v) for v in parts]
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-numeric value in {s!r}") from None
            if not all(np.isfinite(xyz)):
                raise IngestionError(f"{path}:{lineno}: non-finite value in {s!r}")
            rows.append(xyz)
    if not rows:
        raise IngestionError(f"{path}: no points found")
    return PointCloud(np.array(rows))


@dataclass(frozen=True)
class FewShotEpisode:
    way: int
    shot: int
    classes: tuple[int, ...]  # dataset class of each episode class
    support: tuple[tuple[int, int], ...]  # (dataset index, episode class)
    query: tuple[tuple[int, int], ...]
    seed: int
    run: int


def make_fewshot_episodes(
    dataset: LabeledDataset,
    way: int,
    shot: int,
    queries_per_class: int = 20,
    runs: int = 10,
    seed: int = 0,
) -> list[FewShotEpisode]:
    """Sample ``runs`` N-way K-shot episodes; run ``r`` is driven by the generator seeded with ``(seed, r)``."""
    if way < 1 or shot < 1 or queries_per_class < 1 or runs < 1:
        raise InvalidArgumentError("way, shot, queries_per_class and runs must all be >= 1")
    if way > dataset.num_classes:
        raise InvalidArgumentError(f"{way}-way needs {way} classes; dataset has {dataset.num_classes}")
    members = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    need = shot + queries_per_class
    episodes = []
    for run in range(runs):
        rng = np.random.default_rng([seed, run])
        classes = rng.choice(dataset.num_classes, size=way, replace=False)
        support, query = [], []
        for ep_class, c in enumerate(classes):
            pool = members[c]
            if pool.size < need:
                raise InvalidArgumentError(
                    f"class {dataset.class_names[c]!r} has {pool.size} samples, "
                    f"{need} needed for {shot}-shot with {queries_per_class} queries"
                )
            picked = rng.permutation(pool)[:need]
            support += [(int(i), ep_class) for i in picked[:shot]]
            query += [(int(i), ep_class) for i in picked[shot:]]
        episodes.append(
            FewShotEpisode(way, shot, tuple(int(c) for c in classes), tuple(support), tuple(query), seed, run)
        )
    return episodes
