"""Knowledge-aware re-optimization of detection score vectors.

Given per-box class scores P and a consistency matrix S, the engine
minimizes a two-term quadratic energy over adjusted scores X:

    E(X) = (1 - eps) * sum over ordered box pairs b != b', classes l, l'
               of S[l, l'] * (X[b, l] - X[b', l'])^2
         + eps * sum over boxes b, classes l
               of B * S_row[l] * (X[b, l] - P[b, l])^2

with S_row[l] the row sum of S. The first term rewards agreement between
semantically consistent detections; the second anchors the result to the
backbone's output. The stationary point is found by a Jacobi-style
fixed-point iteration on the gradient-zero system (the system is linear
and, for eps in (0, 1), strictly diagonally dominant on every solved
entry, so the iteration converges). A dense direct solve of the same
system is available for small problems.

Masks restrict which entries take part: an active (box, class) mask from
the per-box top classes, and a symmetric box-pair mask from score-rank
adjacency. Entries outside the masks, and entries whose class has an all-
zero consistency row (vacuous stationarity), are returned unchanged.
Scores are clamped to [0, 1] once after convergence.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .consistency import ConsistencyMatrix
from .errors import ConfigError, ConvergenceError, ValidationError, VocabularyMismatchError
from .model import Detection, ImageDetections, LabelVocabulary, ranking_score


@dataclass(frozen=True)
class ReoptConfig:
    """Hyperparameters of the energy minimization and selection pipeline.

    ``neighbor_boxes`` / ``classes_considered`` of ``None`` mean no
    restriction (all other boxes / all classes). ``epsilon`` must stay
    below 1 unless ``allow_epsilon_above_one`` is set; above 1 the
    pairwise term's weight turns negative and the energy may be unbounded,
    so the solver only promises to converge or fail loudly.
    """

    epsilon: float
    top_k_detections: int = 100
    neighbor_boxes: int | None = None
    classes_considered: int | None = None
    post_score_threshold: float = 0.0
    solver_tolerance: float = 1e-8
    solver_max_iterations: int = 10_000
    allow_epsilon_above_one: bool = False

    def __post_init__(self):
        if not math.isfinite(self.epsilon) or self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.epsilon >= 1.0 and not self.allow_epsilon_above_one:
            raise ConfigError(
                f"epsilon={self.epsilon} requires allow_epsilon_above_one"
            )
        if self.top_k_detections < 0:
            raise ConfigError("top_k_detections must be >= 0")
        if self.neighbor_boxes is not None and self.neighbor_boxes < 1:
            raise ConfigError("neighbor_boxes must be >= 1")
        if self.classes_considered is not None and self.classes_considered < 1:
            raise ConfigError("classes_considered must be >= 1")
        if not 0.0 <= self.post_score_threshold <= 1.0:
            raise ConfigError("post_score_threshold must be in [0, 1]")
        if self.solver_tolerance <= 0.0:
            raise ConfigError("solver_tolerance must be positive")
        if self.solver_max_iterations < 1:
            raise ConfigError("solver_max_iterations must be >= 1")


@dataclass(frozen=True)
class ScoreDelta:
    """One re-optimized (box, class) entry; det_index is the original index."""

    image_id: str
    det_index: int
    class_id: int
    before: float
    after: float


@dataclass(frozen=True)
class ImageSolverStats:
    image_id: str
    iterations: int
    residual: float


@dataclass(frozen=True)
class ImageReopt:
    """Full per-image outcome, including selection bookkeeping."""

    image: ImageDetections
    deltas: tuple[ScoreDelta, ...]
    kept_indices: tuple[int, ...]  # original index of each surviving detection
    stats: ImageSolverStats


@dataclass(frozen=True)
class ReoptResult:
    images: tuple[ImageDetections, ...]
    per_detection_deltas: tuple[ScoreDelta, ...]
    solver_stats: tuple[ImageSolverStats, ...]
    kept_indices: tuple[tuple[int, ...], ...]


def _consistency_values(s: ConsistencyMatrix | np.ndarray) -> np.ndarray:
    if isinstance(s, ConsistencyMatrix):
        return s.values
    values = np.asarray(s, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError(f"consistency matrix must be square, got shape {values.shape}")
    if not np.array_equal(values, values.T) or np.any(values < 0):
        raise ValidationError("consistency matrix must be symmetric and nonnegative")
    return values


def _default_masks(nb: int, nl: int) -> tuple[np.ndarray, np.ndarray]:
    active = np.ones((nb, nl), dtype=bool)
    pair = ~np.eye(nb, dtype=bool)
    return active, pair


def _check_masks(nb, nl, active, pair):
    if active.shape != (nb, nl):
        raise ValidationError(f"active mask shape {active.shape} != {(nb, nl)}")
    if pair.shape != (nb, nb):
        raise ValidationError(f"pair mask shape {pair.shape} != {(nb, nb)}")
    if np.any(np.diag(pair)):
        raise ValidationError("pair mask must have an empty diagonal")


def energy(
    p_hat: np.ndarray,
    p: np.ndarray,
    s: ConsistencyMatrix | np.ndarray,
    epsilon: float,
    active_mask: np.ndarray | None = None,
    pair_mask: np.ndarray | None = None,
) -> float:
    """Evaluate the re-optimization energy at the candidate scores ``p_hat``.

    Both sums range over active entries only; the pairwise sum is further
    restricted to box pairs admitted by ``pair_mask`` (all pairs when
    omitted, matching the unmasked objective).
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    values = _consistency_values(s)
    if p_hat.shape != p.shape:
        raise ValidationError(f"shape mismatch: {p_hat.shape} vs {p.shape}")
    nb, nl = p.shape
    if values.shape[0] != nl:
        raise VocabularyMismatchError(
            f"scores have {nl} classes but consistency matrix is {values.shape[0]}x{values.shape[0]}"
        )
    if active_mask is None or pair_mask is None:
        d_active, d_pair = _default_masks(nb, nl)
        active_mask = d_active if active_mask is None else np.asarray(active_mask, dtype=bool)
        pair_mask = d_pair if pair_mask is None else np.asarray(pair_mask, dtype=bool)
    else:
        active_mask = np.asarray(active_mask, dtype=bool)
        pair_mask = np.asarray(pair_mask, dtype=bool)
    _check_masks(nb, nl, active_mask, pair_mask)
    return float(_kernels.energy_value(p_hat, p, values, float(epsilon), active_mask, pair_mask))


def _solve(p, values, cfg, active_mask, pair_mask):
    x, iterations, residual, status = _kernels.jacobi_solve(
        p,
        values,
        float(cfg.epsilon),
        active_mask,
        pair_mask,
        float(cfg.solver_tolerance),
        int(cfg.solver_max_iterations),
    )
    if status == _kernels.JACOBI_MAX_ITER:
        raise ConvergenceError(
            "re-optimization did not converge",
            residual=float(residual),
            iterations=int(iterations),
        )
    if status == _kernels.JACOBI_NON_FINITE:
        raise ConvergenceError(
            "re-optimization diverged to non-finite values",
            residual=float(residual),
            iterations=int(iterations),
        )
    if status == _kernels.JACOBI_BAD_DIAGONAL:
        raise ConvergenceError(
            "stationarity system has a non-positive diagonal; "
            "the fixed-point update is ill-posed at this epsilon",
            residual=float(residual),
            iterations=int(iterations),
        )
    return x, int(iterations), float(residual)


def minimize_with_stats(
    p: np.ndarray,
    s: ConsistencyMatrix | np.ndarray,
    cfg: ReoptConfig,
    active_mask: np.ndarray | None = None,
    pair_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, int, float]:
    """Like :func:`minimize` but also reports (iterations, final residual)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValidationError(f"expected a B x L score matrix, got shape {p.shape}")
    values = _consistency_values(s)
    nb, nl = p.shape
    if values.shape[0] != nl:
        raise VocabularyMismatchError(
            f"scores have {nl} classes but consistency matrix is {values.shape[0]}x{values.shape[0]}"
        )
    if active_mask is None:
        active_mask = np.ones((nb, nl), dtype=bool)
    else:
        active_mask = np.asarray(active_mask, dtype=bool)
    if pair_mask is None:
        pair_mask = ~np.eye(nb, dtype=bool)
    else:
        pair_mask = np.asarray(pair_mask, dtype=bool)
    _check_masks(nb, nl, active_mask, pair_mask)
    x, iterations, residual = _solve(p, values, cfg, active_mask, pair_mask)
    return np.clip(x, 0.0, 1.0), iterations, residual


def minimize(
    p: np.ndarray,
    s: ConsistencyMatrix | np.ndarray,
    cfg: ReoptConfig,
    active_mask: np.ndarray | None = None,
    pair_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Scores satisfying the gradient-zero condition of the energy.

    Convergence is measured as the max-norm of the energy gradient over
    active entries; the result is clamped to [0, 1] after convergence.
    Entries outside the masks, or whose class has a zero consistency row,
    come back unchanged.
    """
    x, _, _ = minimize_with_stats(p, s, cfg, active_mask, pair_mask)
    return x


def solve_direct(
    p: np.ndarray,
    s: ConsistencyMatrix | np.ndarray,
    epsilon: float,
    active_mask: np.ndarray | None = None,
    pair_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Dense direct solve of the stationarity linear system.

    Intended for small B*L; unclamped. The gradient of the energy at entry
    (b, l) is linear in the active scores, so stationarity is a linear
    system over the solved entries (active with a nonzero consistency row).
    """
    p = np.asarray(p, dtype=np.float64)
    values = _consistency_values(s)
    nb, nl = p.shape
    if active_mask is None or pair_mask is None:
        d_active, d_pair = _default_masks(nb, nl)
        active_mask = d_active if active_mask is None else np.asarray(active_mask, dtype=bool)
        pair_mask = d_pair if pair_mask is None else np.asarray(pair_mask, dtype=bool)
    else:
        active_mask = np.asarray(active_mask, dtype=bool)
        pair_mask = np.asarray(pair_mask, dtype=bool)
    _check_masks(nb, nl, active_mask, pair_mask)

    s_row = values.sum(axis=1)
    solved = active_mask & (s_row[None, :] > 0.0)
    entries = [(b, l) for b in range(nb) for l in range(nl) if solved[b, l]]
    if not entries:
        return p.copy()
    index = {bl: i for i, bl in enumerate(entries)}
    n = len(entries)
    a = 1.0 - float(epsilon)
    mat = np.zeros((n, n))
    rhs = np.zeros(n)
    for (b, l), i in index.items():
        cu = float(epsilon) * nb * s_row[l]
        coupling = 0.0
        for b2 in range(nb):
            if not pair_mask[b, b2]:
                continue
            for l2 in range(nl):
                if not active_mask[b2, l2]:
                    continue
                coupling += values[l, l2]
                j = index.get((b2, l2))
                if j is not None:
                    mat[i, j] -= 2.0 * a * values[l, l2]
        mat[i, i] += 2.0 * a * coupling + cu
        rhs[i] = cu * p[b, l]
    solution = np.linalg.solve(mat, rhs)
    x = p.copy()
    for (b, l), i in index.items():
        x[b, l] = solution[i]
    return x


# ---------------------------------------------------------------------------
# selection pipeline
# ---------------------------------------------------------------------------


def _selection_indices(scores: Sequence[float], k: int) -> list[int]:
    if len(scores) <= k:
        return list(range(len(scores)))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(order[:k])


def _active_mask(p: np.ndarray, classes_considered: int | None) -> np.ndarray:
    nb, nl = p.shape
    if classes_considered is None or classes_considered >= nl:
        return np.ones((nb, nl), dtype=bool)
    mask = np.zeros((nb, nl), dtype=bool)
    for b in range(nb):
        top = np.argsort(-p[b], kind="stable")[:classes_considered]
        mask[b, top] = True
    return mask


def _pair_mask(rank_scores: Sequence[float], neighbor_boxes: int | None) -> np.ndarray:
    nb = len(rank_scores)
    if neighbor_boxes is None or neighbor_boxes >= nb - 1:
        return ~np.eye(nb, dtype=bool)
    order = sorted(range(nb), key=lambda i: (-rank_scores[i], i))
    pair = np.zeros((nb, nb), dtype=bool)
    for b in range(nb):
        taken = 0
        for other in order:
            if other == b:
                continue
            pair[b, other] = True
            taken += 1
            if taken == neighbor_boxes:
                break
    # couplings are symmetric: a box also participates in the pairwise term
    # of every box that ranked it among its neighbors
    return pair | pair.T


def _reoptimize_image_full(
    dets: ImageDetections, s: ConsistencyMatrix, cfg: ReoptConfig
) -> ImageReopt:
    vocab = s.vocab
    nl = len(vocab)
    for det_no, det in enumerate(dets.detections):
        if det.scores.size != nl:
            raise VocabularyMismatchError(
                f"image {dets.image_id!r} detection {det_no}: {det.scores.size} scores, "
                f"vocabulary has {nl} classes"
            )

    rank_all = [ranking_score(d, vocab) for d in dets.detections]
    selected = _selection_indices(rank_all, cfg.top_k_detections)
    empty_stats = ImageSolverStats(dets.image_id, iterations=0, residual=0.0)
    if not selected:
        empty = ImageDetections(dets.image_id, dets.image_width, dets.image_height, ())
        return ImageReopt(empty, (), (), empty_stats)

    p = np.stack([dets.detections[i].scores for i in selected])
    active = _active_mask(p, cfg.classes_considered)
    pair = _pair_mask([rank_all[i] for i in selected], cfg.neighbor_boxes)
    x, iterations, residual = _solve(p, s.values, cfg, active, pair)
    x = np.clip(x, 0.0, 1.0)

    deltas = []
    for row, orig in enumerate(selected):
        for l in range(nl):
            if active[row, l]:
                deltas.append(
                    ScoreDelta(dets.image_id, orig, l, float(p[row, l]), float(x[row, l]))
                )

    survivors = []
    kept = []
    for row, orig in enumerate(selected):
        new_det = Detection(box=dets.detections[orig].box, scores=x[row].copy())
        if ranking_score(new_det, vocab) >= cfg.post_score_threshold:
            survivors.append(new_det)
            kept.append(orig)
    image = ImageDetections(
        dets.image_id, dets.image_width, dets.image_height, tuple(survivors)
    )
    stats = ImageSolverStats(dets.image_id, iterations=iterations, residual=residual)
    return ImageReopt(image, tuple(deltas), tuple(kept), stats)


def reoptimize_image(
    dets: ImageDetections, s: ConsistencyMatrix, cfg: ReoptConfig
) -> tuple[ImageDetections, tuple[ScoreDelta, ...]]:
    """Re-optimize one image: select top-k, minimize, threshold.

    Returns the surviving detections with adjusted scores, plus one delta
    record per active (detection, class) entry, indexed by the detection's
    original position in the input.
    """
    outcome = _reoptimize_image_full(dets, s, cfg)
    return outcome.image, outcome.deltas


def reoptimize_images(
    images: Sequence[ImageDetections],
    s: ConsistencyMatrix,
    cfg: ReoptConfig,
    threads: int = 1,
) -> ReoptResult:
    """Re-optimize a dataset; images are independent and may run in parallel.

    Results are ordered like the input regardless of the thread count.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    if threads == 1 or len(images) <= 1:
        outcomes = [_reoptimize_image_full(img, s, cfg) for img in images]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda img: _reoptimize_image_full(img, s, cfg), images))
    return ReoptResult(
        images=tuple(o.image for o in outcomes),
        per_detection_deltas=tuple(d for o in outcomes for d in o.deltas),
        solver_stats=tuple(o.stats for o in outcomes),
        kept_indices=tuple(o.kept_indices for o in outcomes),
    )
