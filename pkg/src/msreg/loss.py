"""Ground-truth match mining and the hard-negative contrastive loss.

For each positive pair the loss pulls the descriptor distance under the
positive margin and pushes the hardest negative on each side beyond the
negative margin:

    sum over positives (i, j) of
        [ ||F_Xi - F_Yj|| - m_plus ]+^2
      + 1/2 [ m_minus - min_k ||F_Xi - F_Yk|| ]+^2   (k in i's negative candidates)
      + 1/2 [ m_minus - min_k ||F_Xk - F_Yj|| ]+^2   (k in j's negative candidates)

Candidates never include an anchor's own positive partners. The loss is
evaluated in float64 regardless of the descriptor dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node, Tape
from .cloud import PointCloud, RigidTransform
from .spatial import build_index

DEFAULT_M_PLUS = 0.1
DEFAULT_M_MINUS = 1.4


@dataclass(frozen=True)
class MatchSet:
    """Index pairs (i into X, j into Y)."""

    pairs: np.ndarray
    kind: str = "positive"

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs) and len(np.unique(pairs, axis=0)) != len(pairs):
            raise ValueError("a match pair may appear at most once")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return self.pairs.shape[0]


def mine_positive_matches(
    X: PointCloud,
    Y: PointCloud,
    T_gt: RigidTransform,
    pos_radius: float,
    max_pairs: int | None = 512,
    rng: np.random.Generator | None = None,
) -> MatchSet:
    """Positive matches under the ground-truth transform.

    Each X point is paired with its nearest Y point within pos_radius
    (distance ties broken by lower Y index). If more than max_pairs
    survive, a seeded random subset is kept (file order preserved).
    """
    if pos_radius <= 0:
        raise ValueError("pos_radius must be positive")
    tx = T_gt.apply(X.points)
    tree = build_index(Y.points)
    k = min(2, len(tree))
    d, j = tree._tree.query(tx, k=k)
    if k == 1:
        d = d[:, None]
        j = j[:, None]
    best_d, best_j = d[:, 0], j[:, 0].astype(np.int64)
    # Exact ties on the nearest distance fall back to a candidate scan
    # so the lower-index rule holds.
    if k == 2:
        for i in np.nonzero(d[:, 1] == d[:, 0])[0]:
            cand = np.array(tree._tree.query_ball_point(tx[i], best_d[i] * (1 + 1e-9)))
            diff = Y.points[cand] - tx[i]
            d2 = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, d2))
            best_j[i] = cand[order[0]]
            best_d[i] = np.sqrt(d2[order[0]])
    keep = best_d <= pos_radius
    ii = np.nonzero(keep)[0].astype(np.int64)
    pairs = np.stack([ii, best_j[keep]], axis=1)
    if max_pairs is not None and len(pairs) > max_pairs:
        rng = rng or np.random.default_rng(0)
        sel = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = pairs[sel]
    return MatchSet(pairs, kind="positive")


def build_negative_candidates(
    X: PointCloud,
    Y: PointCloud,
    positives: MatchSet,
    pos_radius: float,
    num_candidates: int = 256,
    rng: np.random.Generator | None = None,
):
    """Seeded random candidate pools with geometric exclusion.

    Returns (cands_y, cands_x): per-positive index arrays into Y and X.
    A candidate is dropped when it lies within pos_radius of the
    anchor's true partner, so near-duplicates of the partner never
    count as negatives.
    """
    rng = rng or np.random.default_rng(0)
    pool_y = np.sort(rng.choice(len(Y), size=min(num_candidates, len(Y)), replace=False))
    pool_x = np.sort(rng.choice(len(X), size=min(num_candidates, len(X)), replace=False))
    ty = build_index(Y.points[pool_y])
    tx = build_index(X.points[pool_x])
    r = pos_radius * (1 + 1e-9)
    cands_y, cands_x = [], []
    for i, j in positives.pairs:
        near_j = ty._tree.query_ball_point(Y.points[j], r)
        mask = np.ones(len(pool_y), dtype=bool)
        mask[near_j] = False
        cands_y.append(pool_y[mask])
        near_i = tx._tree.query_ball_point(X.points[i], r)
        mask = np.ones(len(pool_x), dtype=bool)
        mask[near_i] = False
        cands_x.append(pool_x[mask])
    return cands_y, cands_x


def _per_anchor(cands, n_pos: int):
    if isinstance(cands, np.ndarray) and cands.ndim == 1:
        return [cands] * n_pos
    if len(cands) != n_pos:
        raise ValueError(f"expected {n_pos} candidate sets, got {len(cands)}")
    return [np.asarray(c, dtype=np.int64) for c in cands]


def contrastive_loss(
    tape: Tape,
    fx: Node,
    fy: Node,
    positives: MatchSet,
    neg_candidates,
    m_plus: float = DEFAULT_M_PLUS,
    m_minus: float = DEFAULT_M_MINUS,
) -> Node:
    """Hard-negative contrastive loss as a differentiable scalar node.

    neg_candidates is a (cands_y, cands_x) pair; each side is either one
    shared 1-D index array or a per-positive sequence of arrays. The
    anchor's positive partners are always excluded. Attaches summary
    statistics to node.info.
    """
    if len(positives) == 0:
        raise ValueError("contrastive loss needs at least one positive pair")
    p = positives.pairs
    fxv = fx.value.astype(np.float64, copy=False)
    fyv = fy.value.astype(np.float64, copy=False)
    cands_y = _per_anchor(neg_candidates[0], len(p))
    cands_x = _per_anchor(neg_candidates[1], len(p))

    partners_of_x: dict[int, set] = {}
    partners_of_y: dict[int, set] = {}
    for i, j in p:
        partners_of_x.setdefault(int(i), set()).add(int(j))
        partners_of_y.setdefault(int(j), set()).add(int(i))

    diff_pos = fxv[p[:, 0]] - fyv[p[:, 1]]
    pos_d = np.linalg.norm(diff_pos, axis=1)
    pos_h = np.maximum(pos_d - m_plus, 0.0)

    neg_terms = []  # (anchor_row_in_F, hardest_row_in_other_F, dist, hinge, side)
    hardest = []
    for n, (i, j) in enumerate(p):
        cy = np.asarray([k for k in cands_y[n] if int(k) not in partners_of_x[int(i)]],
                        dtype=np.int64)
        cx = np.asarray([k for k in cands_x[n] if int(k) not in partners_of_y[int(j)]],
                        dtype=np.int64)
        if len(cy) == 0 or len(cx) == 0:
            raise ValueError(f"positive {n} has an empty negative candidate set")
        dy = np.linalg.norm(fyv[cy] - fxv[i], axis=1)
        ky = int(np.argmin(dy))
        neg_terms.append((int(i), int(cy[ky]), dy[ky], max(m_minus - dy[ky], 0.0), "y"))
        hardest.append(dy[ky])
        dx = np.linalg.norm(fxv[cx] - fyv[j], axis=1)
        kx = int(np.argmin(dx))
        neg_terms.append((int(cx[kx]), int(j), dx[kx], max(m_minus - dx[kx], 0.0), "x"))
        hardest.append(dx[kx])

    loss = float(np.sum(pos_h**2) + 0.5 * sum(h * h for _, _, _, h, _ in neg_terms))

    def vjp(g):
        gs = float(np.asarray(g).reshape(()))
        gfx = np.zeros_like(fxv)
        gfy = np.zeros_like(fyv)
        for n in range(len(p)):
            if pos_h[n] > 0 and pos_d[n] > 0:
                u = diff_pos[n] / pos_d[n]
                c = 2.0 * pos_h[n] * gs
                gfx[p[n, 0]] += c * u
                gfy[p[n, 1]] -= c * u
        # Both sides reduce to the same update on (x_row, y_row):
        # d/d(dist) of 1/2 hinge^2 is -hinge.
        for x_row, y_row, dist, h, _ in neg_terms:
            if h <= 0 or dist <= 0:
                continue
            u = (fxv[x_row] - fyv[y_row]) / dist
            gfx[x_row] -= h * u * gs
            gfy[y_row] += h * u * gs
        ag._accumulate(fx, gfx.astype(fx.value.dtype, copy=False))
        ag._accumulate(fy, gfy.astype(fy.value.dtype, copy=False))

    node = tape.record(np.float64(loss), vjp)
    node.info = {
        "loss": loss,
        "num_positives": int(len(p)),
        "mean_pos_dist": float(pos_d.mean()),
        "mean_hardest_neg_dist": float(np.mean(hardest)),
        "sum_pos_dist": float(pos_d.sum()),
        "sum_hardest_neg_dist": float(np.sum(hardest)),
    }
    return node
