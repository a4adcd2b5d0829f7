"""Ray-level algorithms: label/depth interpolation, noise, and similarity.

Interpolation targets are placed relative to the fan center: target i sits at
(i - floor(n_target/2)) * gap in the fan's internal angle frame. Applied to a
leftmost-first bundle this produces a leftmost-first output, so interpolated
predictions line up ray-for-ray with directly cast low-resolution bundles.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .floorplan import NUM_CLASSES
from .raycast import DEFAULT_MAX_RANGE, NO_HIT, RayBundle

_ANGLE_EPS = 1e-9
_MIN_DEPTH = 1e-6

DEPTH_MATCH_TOLERANCE = 0.10  # meters; rays closer than this count as identical


class InterpolationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Parametric corruption of oracle rays; zero settings are the identity."""

    depth_sigma: float = 0.0
    label_flip_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.depth_sigma < 0:
            raise ValueError("depth_sigma must be >= 0")
        if not 0.0 <= self.label_flip_prob <= 1.0:
            raise ValueError("label_flip_prob must be in [0, 1]")


@dataclass(frozen=True)
class SimilarityWeights:
    """alpha weights the depth error; 1 - alpha weights the label mismatch."""

    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


def _targets(count: int, gap_deg: float, fov_deg: float) -> np.ndarray:
    t = (np.arange(count, dtype=np.float64) - count // 2) * gap_deg
    limit = fov_deg / 2.0 + _ANGLE_EPS
    if np.abs(t).max() > limit:
        raise InterpolationError(
            f"target angles reach {np.abs(t).max():.4f} deg, outside the "
            f"{fov_deg:.4f} deg field of view; refusing to extrapolate"
        )
    return t


def interpolate_semantic_majority(labels, fov_deg: float, target_count: int,
                                  target_gap_deg: float, window: int = 1) -> np.ndarray:
    """Reduce a label fan to `target_count` rays by windowed majority vote.

    For each target the nearest source index is round(c + theta/gap) with
    c = floor(n/2); the majority label over source indices within `window` of
    it (truncated to the valid range) wins. Ties prefer the label of the
    window's center ray, then the smallest label code; index rounding is
    half-to-even.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n < 1 or target_count < 1:
        raise InterpolationError("need at least one source and one target ray")
    if window < 0:
        raise InterpolationError("window must be >= 0")
    t = _targets(target_count, target_gap_deg, fov_deg)
    c = n // 2
    out = np.empty(target_count, dtype=labels.dtype)
    for i in range(target_count):
        if n == 1:
            idx = 0
        else:
            gap = fov_deg / (n - 1)
            idx = int(round(c + t[i] / gap))
        lo = min(max(0, idx - window), n - 1)
        hi = min(max(0, idx + window), n - 1)
        votes = Counter(int(v) for v in labels[lo:hi + 1])
        best = max(votes.values())
        tied = sorted(lbl for lbl, cnt in votes.items() if cnt == best)
        if len(tied) == 1:
            out[i] = tied[0]
        elif 0 <= idx <= n - 1 and int(labels[idx]) in tied:
            out[i] = labels[idx]
        else:
            out[i] = tied[0]
    return out


def interpolate_depth_linear(depths, fov_deg: float, target_count: int,
                             target_gap_deg: float) -> np.ndarray:
    """Reduce a depth fan to `target_count` rays by linear interpolation in angle."""
    depths = np.asarray(depths, dtype=np.float64)
    n = len(depths)
    if n < 1 or target_count < 1:
        raise InterpolationError("need at least one source and one target ray")
    t = _targets(target_count, target_gap_deg, fov_deg)
    if n == 1:
        return np.full(target_count, depths[0])
    src = np.linspace(-fov_deg / 2.0, fov_deg / 2.0, n)
    return np.interp(np.clip(t, src[0], src[-1]), src, depths)


def interpolate_bundle(bundle: RayBundle, target_count: int,
                       window: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate a full-resolution bundle to the coarse ray count."""
    cam = bundle.camera
    fov = cam.fov_deg if cam is not None else 80.0
    gap = fov / (target_count - 1) if target_count > 1 else 0.0
    depths = interpolate_depth_linear(bundle.depths, fov, target_count, gap)
    labels = interpolate_semantic_majority(bundle.labels, fov, target_count, gap, window)
    return depths, labels


def perturb(bundle: RayBundle, noise: NoiseModel,
            num_classes: int = NUM_CLASSES) -> RayBundle:
    """Corrupt a bundle with Gaussian depth noise and label flips.

    Depths are clamped to (0, max_range]; a flipped label becomes a uniformly
    random class in 1..C other than its current value. Deterministic per seed.
    """
    rng = np.random.default_rng(noise.rng_seed)
    l = len(bundle)
    max_range = bundle.camera.max_range if bundle.camera else DEFAULT_MAX_RANGE
    depths = bundle.depths + noise.depth_sigma * rng.standard_normal(l)
    depths = np.clip(depths, _MIN_DEPTH, max_range)
    flip = rng.random(l) < noise.label_flip_prob
    k_hit = rng.integers(0, max(1, num_classes - 1), size=l)
    k_any = rng.integers(1, num_classes + 1, size=l)
    labels = bundle.labels.copy()
    for i in np.flatnonzero(flip):
        cur = int(labels[i])
        if 1 <= cur <= num_classes:
            if num_classes == 1:
                continue  # no other class exists
            pick = int(k_hit[i]) + 1
            labels[i] = pick if pick < cur else pick + 1
        else:
            labels[i] = int(k_any[i])
    return RayBundle(depths=depths, labels=labels,
                     pose=bundle.pose, camera=bundle.camera)


def semantic_mismatch(a: np.ndarray, b: np.ndarray, metric: str = "binary") -> float:
    """Mean label disagreement; "l1" uses raw code differences instead."""
    if metric == "binary":
        return float(np.mean(a != b))
    if metric == "l1":
        return float(np.mean(np.abs(a.astype(np.int64) - b.astype(np.int64))))
    raise ValueError(f"unknown semantic metric {metric!r}")


def ray_similarity(pred: RayBundle, ref: RayBundle, weights: SimilarityWeights,
                   semantic_metric: str = "binary") -> float:
    """Weighted ray error; lower is better, zero only for identical bundles.

    score = alpha * mean|depth difference| + (1 - alpha) * mean label mismatch.
    No-hit rays carry depth max_range and their sentinel acts as its own label
    class, so the score stays finite and total.
    """
    if len(pred) != len(ref):
        raise ValueError(f"ray count mismatch: {len(pred)} vs {len(ref)}")
    depth_err = float(np.mean(np.abs(pred.depths - ref.depths)))
    sem_err = semantic_mismatch(pred.labels, ref.labels, semantic_metric)
    return weights.alpha * depth_err + (1.0 - weights.alpha) * sem_err


def depths_match(a: float, b: float) -> bool:
    """True when two depth readings differ by less than the 10 cm tolerance."""
    return abs(a - b) < DEPTH_MATCH_TOLERANCE


@dataclass
class PredictionRecord:
    """One externally produced ray prediction, keyed by query id."""

    query_id: str
    depths: np.ndarray
    labels: np.ndarray
    room_label: str | None = None
    room_conf: float | None = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.depths.shape != self.labels.shape:
            raise ValueError(f"{self.query_id}: depths/labels length mismatch")

    def bundle(self, camera=None) -> RayBundle:
        return RayBundle(depths=self.depths, labels=self.labels, camera=camera)

    def room_hint(self) -> tuple[str, float] | None:
        if self.room_label is None:
            return None
        conf = 1.0 if self.room_conf is None else float(self.room_conf)
        return (self.room_label, conf)


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    """Read a JSON-Lines prediction file (leftmost-first ray order)."""
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            records.append(PredictionRecord(
                query_id=str(doc["query_id"]),
                depths=doc["depths"],
                labels=doc["labels"],
                room_label=doc.get("room_label"),
                room_conf=doc.get("room_conf"),
            ))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ValueError(f"{path}:{lineno}: bad prediction record: {e}") from e
    return records


def save_predictions(records: list[PredictionRecord], path: str | Path) -> None:
    lines = []
    for rec in records:
        doc = {"query_id": rec.query_id,
               "depths": [float(v) for v in rec.depths],
               "labels": [int(v) for v in rec.labels]}
        if rec.room_label is not None:
            doc["room_label"] = rec.room_label
            doc["room_conf"] = rec.room_conf
        lines.append(json.dumps(doc, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
