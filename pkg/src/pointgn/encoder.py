"""Gaussian positional encoding and the hierarchical non-parametric encoder.

Feature layout: a point's encoding is ``V`` consecutive ``(x, y, z)`` triples,
one per reference value, so column ``3*j + a`` holds axis ``a`` against
reference ``j``.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidArgumentError, InvalidInputError
from .geometry import PointCloud, fps, knn, normalize_groups, normalize_unit_sphere

AGG_MODES = ("paper-literal", "multiplicative")
STD_MODES = ("pooled", "per-dimension")


@dataclass(frozen=True)
class EncoderConfig:
    refs_per_axis: int = 9
    sigma: float = 0.35
    k: int = 120
    stages: int = 4
    agg_mode: str = "paper-literal"
    normalize_input: bool = True
    clamp_k: bool = False
    group_std_mode: str = "pooled"
    # optional per-stage sigma used by the aggregation of stage s (0-based)
    stage_sigmas: Optional[tuple[float, ...]] = field(default=None)

    def __post_init__(self) -> None:
        if self.refs_per_axis < 1:
            raise InvalidArgumentError("refs_per_axis must be >= 1")
        if not self.sigma > 0:
            raise InvalidArgumentError("sigma must be positive")
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.stages < 1:
            raise InvalidArgumentError("stages must be >= 1")
        if self.agg_mode not in AGG_MODES:
            raise InvalidArgumentError(f"agg_mode must be one of {AGG_MODES}")
        if self.group_std_mode not in STD_MODES:
            raise InvalidArgumentError(f"group_std_mode must be one of {STD_MODES}")
        if self.stage_sigmas is not None:
            sig = tuple(float(s) for s in self.stage_sigmas)
            if len(sig) != self.stages or min(sig) <= 0:
                raise InvalidArgumentError("stage_sigmas needs one positive value per stage")
            object.__setattr__(self, "stage_sigmas", sig)

    @property
    def dim(self) -> int:
        """Per-point feature dimension D = 3V."""
        return 3 * self.refs_per_axis

    @property
    def feature_dim(self) -> int:
        return self.stages * self.dim

    @property
    def min_points(self) -> int:
        return 2**self.stages

    def sigma_for_stage(self, stage: int) -> float:
        if self.stage_sigmas is None:
            return self.sigma
        return self.stage_sigmas[stage]

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["stage_sigmas"] is not None:
            d["stage_sigmas"] = list(d["stage_sigmas"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        if kw.get("stage_sigmas") is not None:
            kw["stage_sigmas"] = tuple(kw["stage_sigmas"])
        return cls(**kw)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class StageState:
    coords: NDArray[np.float64]
    feats: NDArray[np.float64]
    stage_index: int = 0


@dataclass(frozen=True)
class GlobalFeature:
    values: NDArray[np.float64]
    source_label: Optional[int] = None


def make_reference_grid(v: int) -> NDArray[np.float64]:
    """``v`` evenly spaced reference values on [-1, 1]; ``[0]`` when v == 1."""
    v = int(v)
    if v < 1:
        raise InvalidArgumentError(f"need at least one reference value; got {v}")
    if v == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(v) / (v - 1)


def gpe_encode(coords: ArrayLike, refs: ArrayLike, sigma: float) -> NDArray[np.float64]:
    """Gaussian response of every coordinate against every reference value.

    ``coords`` has shape ``(..., 3)``; the result has shape ``(..., 3V)``.
    """
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive; got {sigma}")
    c = np.asarray(coords, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64).reshape(-1)
    if c.shape[-1] != 3:
        raise InvalidArgumentError(f"coords must end in an axis of length 3; got {c.shape}")
    diff = c[..., None, :] - r[:, None]  # (..., V, 3)
    enc = np.exp(-(diff * diff) / (2.0 * sigma * sigma))
    return enc.reshape(*c.shape[:-1], 3 * r.size)


def gpe_aggregate(
    group_feats: ArrayLike,
    normalized_coords: ArrayLike,
    config: EncoderConfig,
    sigma: Optional[float] = None,
) -> NDArray[np.float64]:
    """Blend gathered features with the encoding of their normalized offsets.

    Works on a single ``(K, D)`` group or on a ``(G, K, D)`` batch.
    """
    feats = np.asarray(group_feats, dtype=np.float64)
    pos = gpe_encode(
        normalized_coords,
        make_reference_grid(config.refs_per_axis),
        config.sigma if sigma is None else sigma,
    )
    if pos.shape != feats.shape:
        raise InvalidArgumentError(
            f"features {feats.shape} do not match positional encoding {pos.shape}"
        )
    if config.agg_mode == "paper-literal":
        return feats + pos * pos
    return feats * pos


def neighbor_pool(group_feats: ArrayLike) -> NDArray[np.float64]:
    """Mean plus max over the neighbor axis (second to last)."""
    f = np.asarray(group_feats, dtype=np.float64)
    if f.ndim < 2 or f.shape[-2] == 0:
        raise InvalidArgumentError("neighbor_pool needs at least one neighbor row")
    return f.mean(axis=-2) + f.max(axis=-2)


def encode_stage(state: StageState, config: EncoderConfig) -> StageState:
    """One local-grouper / aggregation / pooling step, halving the point count."""
    coords, feats = state.coords, state.feats
    n = coords.shape[0]
    if n < 2:
        raise InvalidInputError(f"a stage needs at least 2 points; got {n}")
    centers = fps(coords, n // 2)
    idx = knn(coords[centers], coords, config.k, clamp_k=config.clamp_k)
    grouped_xyz = normalize_groups(coords[idx], config.group_std_mode)
    grouped_feats = normalize_groups(feats[idx], config.group_std_mode)
    agg = gpe_aggregate(
        grouped_feats, grouped_xyz, config, config.sigma_for_stage(state.stage_index)
    )
    return StageState(coords[centers], neighbor_pool(agg), state.stage_index + 1)


def initial_state(cloud: PointCloud, config: EncoderConfig) -> StageState:
    if config.normalize_input:
        cloud = normalize_unit_sphere(cloud)
    coords = np.array(cloud.points)
    feats = gpe_encode(coords, make_reference_grid(config.refs_per_axis), config.sigma)
    return StageState(coords, feats, 0)


def encode(cloud: PointCloud, config: EncoderConfig = EncoderConfig()) -> GlobalFeature:
    """Encode a cloud into its L2-normalized global feature of length S*D."""
    if len(cloud) < config.min_points:
        raise InvalidInputError(
            f"{config.stages} stages need at least {config.min_points} points; got {len(cloud)}"
        )
    state = initial_state(cloud, config)
    parts = []
    for _ in range(config.stages):
        state = encode_stage(state, config)
        parts.append(state.feats.mean(axis=0) + state.feats.max(axis=0))
    values = np.concatenate(parts)
    norm = np.linalg.norm(values)
    if norm > 0:
        values = values / norm
    return GlobalFeature(values, cloud.label)


def _encode_values(args: tuple[PointCloud, EncoderConfig]) -> NDArray[np.float64]:
    cloud, config = args
    return encode(cloud, config).values


def encode_batch(
    clouds: Sequence[PointCloud] | Iterable[PointCloud],
    config: EncoderConfig = EncoderConfig(),
    workers: int = 1,
    chunksize: int = 8,
) -> NDArray[np.float64]:
    """Encode many clouds into an ``(M, S*D)`` matrix, rows in input order.

    With ``workers > 1`` clouds are spread over a process pool; the result is
    identical to the serial path.
    """
    clouds = list(clouds)
    out = np.empty((len(clouds), config.feature_dim))
    if workers <= 1 or len(clouds) <= 1:
        for i, c in enumerate(clouds):
            out[i] = encode(c, config).values
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        jobs = ((c, config) for c in clouds)
        for i, row in enumerate(pool.map(_encode_values, jobs, chunksize=chunksize)):
            out[i] = row
    return out
