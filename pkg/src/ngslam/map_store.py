"""Per-particle landmark map: persistent weight-balanced tree plus EKF
landmark estimation and Mahalanobis data association.

The tree is immutable; ``set`` returns a new version that shares every
untouched node with its parent, so duplicating a particle's map at
resampling costs nothing and updating one landmark copies only the
O(log M) search path.  Nodes carry the bounding box of their subtree's
landmark means, which lets association prune candidates spatially.

Balance constants follow Adams-style weight-balanced trees (the
Hirai/Yamamoto <3, 2> pair).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import Gaussian
from .models import RANGE_BEARING

_DELTA = 3
_GAMMA = 2

#: 95% / 99% quantiles of the chi-square distribution with 2 dof
GATE_MATCH = 5.991
GATE_NEW = 9.210


@dataclass(frozen=True)
class LandmarkEstimate:
    """Gaussian estimate of one landmark's location."""

    id: int
    mean: np.ndarray
    cov: np.ndarray
    count: int = 1


class _Node:
    __slots__ = ("key", "est", "left", "right", "size", "bounds")

    def __init__(self, key, est, left, right):
        self.key = key
        self.est = est
        self.left = left
        self.right = right
        self.size = 1 + _size(left) + _size(right)
        mx, my = float(est.mean[0]), float(est.mean[1])
        minx = maxx = mx
        miny = maxy = my
        for child in (left, right):
            if child is not None:
                b = child.bounds
                minx = min(minx, b[0])
                miny = min(miny, b[1])
                maxx = max(maxx, b[2])
                maxy = max(maxy, b[3])
        self.bounds = (minx, miny, maxx, maxy)


def _size(node):
    return 0 if node is None else node.size


def _weight(node):
    return _size(node) + 1


def _single_left(key, est, left, right):
    return _Node(right.key, right.est, _Node(key, est, left, right.left), right.right)


def _single_right(key, est, left, right):
    return _Node(left.key, left.est, left.left, _Node(key, est, left.right, right))


def _double_left(key, est, left, right):
    rl = right.left
    return _Node(
        rl.key,
        rl.est,
        _Node(key, est, left, rl.left),
        _Node(right.key, right.est, rl.right, right.right),
    )


def _double_right(key, est, left, right):
    lr = left.right
    return _Node(
        lr.key,
        lr.est,
        _Node(left.key, left.est, left.left, lr.left),
        _Node(key, est, lr.right, right),
    )


def _join(key, est, left, right):
    wl, wr = _weight(left), _weight(right)
    if wr > _DELTA * wl:
        if _weight(right.left) < _GAMMA * _weight(right.right):
            return _single_left(key, est, left, right)
        return _double_left(key, est, left, right)
    if wl > _DELTA * wr:
        if _weight(left.right) < _GAMMA * _weight(left.left):
            return _single_right(key, est, left, right)
        return _double_right(key, est, left, right)
    return _Node(key, est, left, right)


def _insert(node, key, est):
    if node is None:
        return _Node(key, est, None, None)
    if key < node.key:
        return _join(node.key, node.est, _insert(node.left, key, est), node.right)
    if key > node.key:
        return _join(node.key, node.est, node.left, _insert(node.right, key, est))
    return _Node(key, est, node.left, node.right)


def _iter_nodes(node):
    if node is not None:
        yield from _iter_nodes(node.left)
        yield node
        yield from _iter_nodes(node.right)


def _query_radius(node, cx, cy, r2, out):
    if node is None:
        return
    minx, miny, maxx, maxy = node.bounds
    dx = max(minx - cx, 0.0, cx - maxx)
    dy = max(miny - cy, 0.0, cy - maxy)
    if dx * dx + dy * dy > r2:
        return
    _query_radius(node.left, cx, cy, r2, out)
    ex = float(node.est.mean[0]) - cx
    ey = float(node.est.mean[1]) - cy
    if ex * ex + ey * ey <= r2:
        out.append(node.est)
    _query_radius(node.right, cx, cy, r2, out)


class LandmarkMap:
    """Immutable landmark store; all mutators return a new version."""

    __slots__ = ("_root",)

    def __init__(self, _root=None):
        self._root = _root

    def __len__(self) -> int:
        return _size(self._root)

    def __iter__(self):
        for node in _iter_nodes(self._root):
            yield node.est

    def get(self, lm_id: int) -> LandmarkEstimate | None:
        node = self._root
        while node is not None:
            if lm_id < node.key:
                node = node.left
            elif lm_id > node.key:
                node = node.right
            else:
                return node.est
        return None

    def set(self, est: LandmarkEstimate) -> "LandmarkMap":
        """Insert or replace by ``est.id``; O(log M) path copy."""
        return LandmarkMap(_insert(self._root, est.id, est))

    def ids(self) -> list[int]:
        return [node.key for node in _iter_nodes(self._root)]

    def max_id(self) -> int:
        if self._root is None:
            return -1
        node = self._root
        while node.right is not None:
            node = node.right
        return node.key

    def near(self, x: float, y: float, radius: float) -> list[LandmarkEstimate]:
        """Landmarks whose mean lies within ``radius`` of ``(x, y)``, id order."""
        out: list[LandmarkEstimate] = []
        _query_radius(self._root, float(x), float(y), float(radius) ** 2, out)
        return out


EMPTY_MAP = LandmarkMap()


@dataclass(frozen=True)
class AssociationSet:
    """Partition of a measurement batch: matched pairs, new landmarks,
    and ambiguous measurements to discard.  Every measurement index lands
    in exactly one list; a landmark id is matched at most once."""

    matched: list = field(default_factory=list)
    new_landmarks: list = field(default_factory=list)
    discarded: list = field(default_factory=list)


def _inv2(m: np.ndarray) -> np.ndarray:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out / det[..., None, None]


def _innovation_covs(pose_cov, pose_point, means, covs, r, model) -> np.ndarray:
    gx = model.jacobian_pose(pose_point, means)
    gm = model.jacobian_landmark(pose_point, means)
    lx = np.einsum("...ij,jk,...lk->...il", gx, pose_cov, gx)
    lm = np.einsum("...ij,...jk,...lk->...il", gm, covs, gm)
    return lx + lm + np.asarray(r, dtype=float)


def innovation_cov(
    lm: LandmarkEstimate, pose_gaussian: Gaussian, pose_point, r, model=RANGE_BEARING
) -> np.ndarray:
    """Covariance of the measurement innovation: pose uncertainty pushed
    through the pose Jacobian, landmark uncertainty through the landmark
    Jacobian, plus measurement noise."""
    return _innovation_covs(
        pose_gaussian.cov, np.asarray(pose_point, dtype=float), lm.mean, lm.cov, r, model
    )


def associate(
    lm_map: LandmarkMap,
    pose_gaussian: Gaussian,
    pose_point,
    z_batch,
    r,
    gates: tuple[float, float] = (GATE_MATCH, GATE_NEW),
    pruning_slack: float = 2.0,
    model=RANGE_BEARING,
) -> AssociationSet:
    """Greedy one-to-one Mahalanobis association of a measurement batch.

    Each measurement is scored against nearby landmarks; it matches the
    argmin landmark if the squared distance passes the match gate, spawns a
    new landmark if even the best candidate is beyond the new-landmark gate
    (or no candidate exists), and is discarded in the ambiguous band between
    the gates.  A landmark claimed by an earlier measurement is skipped.
    """
    gate_match, gate_new = gates
    if not 0.0 < gate_match < gate_new:
        raise ValueError("gates must satisfy 0 < match gate < new-landmark gate")
    pose_point = np.asarray(pose_point, dtype=float)
    z_batch = np.asarray(z_batch, dtype=float)
    r = np.asarray(r, dtype=float)
    sigma_r = float(np.sqrt(r[0, 0]))
    pose_sd = float(np.sqrt(max(np.linalg.eigvalsh(pose_gaussian.cov[:2, :2]).max(), 0.0)))

    result = AssociationSet()
    claimed: set[int] = set()
    for k in range(z_batch.shape[0]):
        z = z_batch[k]
        if model.supports_radius_prune:
            radius = float(z[0]) + 5.0 * sigma_r + 3.0 * pose_sd + pruning_slack
            candidates = [
                c for c in lm_map.near(pose_point[0], pose_point[1], radius)
                if c.id not in claimed
            ]
        else:
            candidates = [c for c in lm_map if c.id not in claimed]
        if not candidates:
            result.new_landmarks.append(k)
            continue

        means = np.stack([c.mean for c in candidates])
        covs = np.stack([c.cov for c in candidates])
        l_all = _innovation_covs(pose_gaussian.cov, pose_point, means, covs, r, model)
        innov = model.residual(z, model.predict(pose_point, means))
        d2 = np.einsum("ci,cij,cj->c", innov, _inv2(l_all), innov)
        best = int(np.argmin(d2))
        if d2[best] <= gate_match:
            result.matched.append((candidates[best].id, k))
            claimed.add(candidates[best].id)
        elif d2[best] > gate_new:
            result.new_landmarks.append(k)
        else:
            result.discarded.append(k)
    return result


def init_landmark(pose, z, r, lm_id: int = 0, model=RANGE_BEARING) -> LandmarkEstimate:
    """First Gaussian estimate of a newly observed landmark: the inverse
    measurement as mean, the measurement noise pushed through the inverse
    landmark Jacobian as covariance."""
    pose = np.asarray(pose, dtype=float)
    mean = np.asarray(model.inverse(pose, np.asarray(z, dtype=float)), dtype=float)
    g_new = model.jacobian_landmark(pose, mean)
    g_inv = np.linalg.inv(g_new)
    cov = g_inv @ np.asarray(r, dtype=float) @ g_inv.T
    return LandmarkEstimate(id=lm_id, mean=mean, cov=0.5 * (cov + cov.T), count=1)


def ekf_update(
    lm: LandmarkEstimate, pose, z, r, model=RANGE_BEARING
) -> LandmarkEstimate:
    """Single-landmark EKF measurement update at the given pose."""
    pose = np.asarray(pose, dtype=float)
    g = model.jacobian_landmark(pose, lm.mean)
    s = g @ lm.cov @ g.T + np.asarray(r, dtype=float)
    gain = lm.cov @ g.T @ _inv2(s)
    innov = model.residual(np.asarray(z, dtype=float), model.predict(pose, lm.mean))
    mean = lm.mean + gain @ innov
    cov = (np.eye(2) - gain @ g) @ lm.cov
    return LandmarkEstimate(
        id=lm.id, mean=mean, cov=0.5 * (cov + cov.T), count=lm.count + 1
    )
