"""Intensity-independent precomputation of linear predictors.

The warped template under warp ``dp`` is ``WCM(dp) @ u`` where ``u`` is the
rasterised bounding box around the keypoint. Stacking
``Y_c = WCM(dp_c) - WCM(0)`` over the training warps gives a tensor that
reproduces the error matrix of any patch as ``E[:, c] = Y_c @ u``. Both
normal-equation terms then follow from two sparse tensors built once:

* ``L[a, b, d] = sum_c P[a, c] Y[b, c, d]``   so ``(P E^T)[a, b] = L[a, b, :] @ u``
* ``Q[b1, b2, e(d1, d2)] = sum_c Y[b1, c, d1] Y[b2, c, d2]`` folded over
  unordered pixel pairs so ``(E E^T)[b1, b2] = sum_e Q[b1, b2, e] u[d1] u[d2]``.

Per-patch learning costs two sparse products and an ``n x n`` solve, none of
which depend on the number of training warps.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from . import warp
from .errors import DimensionMismatch, FormatError, OutOfBounds
from .imaging import PATTERNS, BoundingBox, PatchSpec
from .lp import DctMapping, LinearPredictor, build_dct_mapping, spd_solve, warped_offsets
from .warp import WarpRanges

DROP_TOL = 1e-14

MAGIC = b"SYLP"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQIII12dQd")
_L_ENTRY = np.dtype([("a", "<u1"), ("b", "<u2"), ("d", "<u4"), ("v", "<f8")])
_Q_ENTRY = np.dtype([("b1", "<u2"), ("b2", "<u2"), ("e", "<u8"), ("v", "<f8")])
_PATTERN_NAMES = {v: k for k, v in PATTERNS.items()}

__all__ = [
    "BoundingBox", "SymbolicTensorY", "LinearTensorL", "QuadraticTensorQ", "SymbolicModel",
    "compute_bbox", "build_wcm", "build_Y", "build_L", "build_Q", "build_model",
    "instantiate_linear", "instantiate_quadratic", "learn_symbolic", "learn_symbolic_dct",
    "pair_index", "pair_from_index", "save_model", "load_model",
]


def compute_bbox(spec: PatchSpec, ranges: WarpRanges) -> BoundingBox:
    """Smallest box (plus one pixel of bilinear support) reachable by in-range warps.

    Warped coordinates are bilinear in (point, parameters), so their extremes
    over the patch and the parameter box sit at vertices of both.
    """
    off = spec.offsets
    if ranges.is_zero():
        return BoundingBox(int(-off[:, 0].min()), int(off[:, 0].max()),
                           int(-off[:, 1].min()), int(off[:, 1].max()))
    xs = (off[:, 0].min(), off[:, 0].max())
    ys = (off[:, 1].min(), off[:, 1].max())
    lo, hi = np.asarray(ranges.lo), np.asarray(ranges.hi)
    pv = np.array(np.meshgrid(*[(lo[i], hi[i]) for i in range(6)], indexing="ij")).reshape(6, -1)
    corners = np.array([(x, y) for x in xs for y in ys])
    wx, wy = warped_offsets(corners, pv)
    return BoundingBox(int(np.ceil(-wx.min())) + 1, int(np.ceil(wx.max())) + 1,
                       int(np.ceil(-wy.min())) + 1, int(np.ceil(wy.max())) + 1)


def pair_index(d1, d2, l: int):  # noqa: E741
    """Upper-triangular row-major index of the unordered pair ``{d1, d2}``."""
    d1 = np.asarray(d1, dtype=np.int64)
    d2 = np.asarray(d2, dtype=np.int64)
    lo = np.minimum(d1, d2)
    hi = np.maximum(d1, d2)
    return lo * l - lo * (lo - 1) // 2 + (hi - lo)


def pair_from_index(e, l: int):  # noqa: E741
    e = np.asarray(e, dtype=np.int64)
    d = np.arange(l, dtype=np.int64)
    starts = d * l - d * (d - 1) // 2
    d1 = np.searchsorted(starts, e, side="right") - 1
    d2 = e - starts[d1] + d1
    return d1, d2


def _bilinear_coo(wx: np.ndarray, wy: np.ndarray, bbox: BoundingBox):
    """Bilinear weights of warped points over bounding-box pixels.

    ``wx``/``wy`` are arrays of any shape; returns flat ``(point, d, weight)``
    triples with exactly-zero weights removed.
    """
    wx = wx.ravel()
    wy = wy.ravel()
    x0 = np.floor(wx)
    y0 = np.floor(wy)
    fx = wx - x0
    fy = wy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    idx = np.arange(wx.size)
    pts, ds, ws = [], [], []
    for dx, dy, w in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                      (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        keep = w != 0.0
        ix = x0[keep] + dx
        iy = y0[keep] + dy
        if not np.all(bbox.contains(ix, iy)):
            raise OutOfBounds("warped patch leaves the bounding box; ranges and box disagree")
        pts.append(idx[keep])
        ds.append(bbox.index(ix, iy))
        ws.append(w[keep])
    return np.concatenate(pts), np.concatenate(ds), np.concatenate(ws)


def build_wcm(spec: PatchSpec, dp, bbox: BoundingBox) -> sparse.csr_matrix:
    """Sparse ``n x l`` matrix with ``WCM @ u`` = warped-template samples."""
    P = warp.as_params(dp).reshape(6, 1)
    wx, wy = warped_offsets(spec.offsets, P)
    rows, cols, vals = _bilinear_coo(wx, wy, bbox)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(spec.n, bbox.l))


@dataclass(frozen=True, eq=False)
class SymbolicTensorY:
    """Sparse ``n x m x l`` tensor in coordinate form, sorted by (c, b, d)."""

    n: int
    m: int
    l: int  # noqa: E741
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    v: np.ndarray

    @property
    def nnz(self) -> int:
        return self.v.size

    def matrix(self) -> sparse.csr_matrix:
        """Flattened ``m x (n*l)`` view, row ``c``, column ``b*l + d``."""
        return sparse.csr_matrix((self.v, (self.c, self.b * self.l + self.d)),
                                 shape=(self.m, self.n * self.l))

    def slice(self, c: int) -> sparse.csr_matrix:
        sel = self.c == c
        return sparse.csr_matrix((self.v[sel], (self.b[sel], self.d[sel])),
                                 shape=(self.n, self.l))

    def contract(self, u) -> np.ndarray:
        """``E[b, c] = sum_d Y[b, c, d] u[d]``, shape ``n x m``."""
        u = np.asarray(u, dtype=np.float64)
        flat = np.bincount(self.b * self.m + self.c, weights=self.v * u[self.d],
                           minlength=self.n * self.m)
        return flat.reshape(self.n, self.m)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.m, self.l))
        np.add.at(out, (self.b, self.c, self.d), self.v)
        return out


def build_Y(spec: PatchSpec, P, bbox: BoundingBox) -> SymbolicTensorY:
    P = np.asarray(P, dtype=np.float64).reshape(6, -1)
    n, m, l = spec.n, P.shape[1], bbox.l  # noqa: E741
    wx, wy = warped_offsets(spec.offsets, P)
    pt, d, v = _bilinear_coo(wx, wy, bbox)
    # point index is b*m + c; subtract the identity coefficient of every (b, c)
    ident = bbox.index(spec.offsets[:, 0].astype(np.int64), spec.offsets[:, 1].astype(np.int64))
    bc = np.arange(n * m)
    rows = np.concatenate([pt, bc])
    cols = np.concatenate([d, np.repeat(ident, m)])
    vals = np.concatenate([v, -np.ones(n * m)])
    b, c = np.divmod(rows, m)
    acc = sparse.coo_matrix((vals, (c * n + b, cols)), shape=(m * n, l)).tocsr()
    acc.sum_duplicates()
    acc.eliminate_zeros()
    acc = acc.tocoo()
    c, b = np.divmod(acc.row.astype(np.int64), n)
    order = np.lexsort((acc.col, b, c))
    return SymbolicTensorY(n, m, l, b[order], c[order], acc.col.astype(np.int64)[order],
                           acc.data[order])


@dataclass(frozen=True, eq=False)
class LinearTensorL:
    """Sparse ``6 x n x l`` tensor, entries grouped by ``d``."""

    n: int
    l: int  # noqa: E741
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    v: np.ndarray

    @property
    def nnz(self) -> int:
        return self.v.size

    @cached_property
    def operator(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.v, (self.a * self.n + self.b, self.d)),
                                 shape=(6 * self.n, self.l))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((6, self.n, self.l))
        out[self.a, self.b, self.d] = self.v
        return out


def _sorted_L(n, l, a, b, d, v) -> LinearTensorL:  # noqa: E741
    order = np.lexsort((b, a, d))
    return LinearTensorL(n, l, a[order].astype(np.int64), b[order].astype(np.int64),
                         d[order].astype(np.int64), v[order])


def build_L(P, Y: SymbolicTensorY) -> LinearTensorL:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (6, Y.m):
        raise DimensionMismatch(f"warp matrix {P.shape} does not match Y with m={Y.m}")
    dense = np.asarray(Y.matrix().T @ P.T).T  # (6, n*l)
    a, flat = np.nonzero(np.abs(dense) >= DROP_TOL)
    b, d = np.divmod(flat, Y.l)
    return _sorted_L(Y.n, Y.l, a, b, d, dense[a, flat])


@dataclass(frozen=True, eq=False)
class QuadraticTensorQ:
    """Sparse tensor over ``(b1 <= b2, e)``, entries grouped by pair index ``e``."""

    n: int
    l: int  # noqa: E741
    b1: np.ndarray
    b2: np.ndarray
    e: np.ndarray
    v: np.ndarray

    @property
    def q(self) -> int:
        return self.l * (self.l + 1) // 2

    @property
    def nnz(self) -> int:
        return self.v.size

    @cached_property
    def _operator(self):
        pairs, col = np.unique(self.e, return_inverse=True)
        d1, d2 = pair_from_index(pairs, self.l)
        op = sparse.csr_matrix((self.v, (self.b1 * self.n + self.b2, col)),
                               shape=(self.n * self.n, pairs.size))
        return op, d1, d2


def _sorted_Q(n, l, b1, b2, e, v) -> QuadraticTensorQ:  # noqa: E741
    order = np.lexsort((b2, b1, e))
    return QuadraticTensorQ(n, l, b1[order].astype(np.int64), b2[order].astype(np.int64),
                            e[order].astype(np.int64), v[order])


def build_Q(Y: SymbolicTensorY, chunk: int = 2000) -> QuadraticTensorQ:
    """Contract ``Y`` with itself over the warp index and fold pixel pairs.

    Warps are processed in chunks of ``chunk`` columns whose partial Gram
    matrices are summed, bounding peak memory.
    """
    n, l = Y.n, Y.l  # noqa: E741
    Ym = Y.matrix()
    G = None
    for start in range(0, Y.m, chunk):
        block = Ym[start:start + chunk]
        part = (block.T.tocsr() @ block).tocoo()
        keep = part.row // l <= part.col // l
        part = sparse.coo_matrix((part.data[keep], (part.row[keep], part.col[keep])),
                                 shape=part.shape).tocsr()
        G = part if G is None else G + part
    if G is None:
        return _sorted_Q(n, l, *(np.zeros(0, np.int64),) * 3, np.zeros(0))
    G = G.tocoo()
    b1, d1 = np.divmod(G.row.astype(np.int64), l)
    b2, d2 = np.divmod(G.col.astype(np.int64), l)
    e = pair_index(d1, d2, l)
    q = l * (l + 1) // 2
    keys = (b1 * n + b2) * q + e
    uniq, inv = np.unique(keys, return_inverse=True)
    vals = np.bincount(inv, weights=G.data, minlength=uniq.size)
    keep = np.abs(vals) >= DROP_TOL
    uniq, vals = uniq[keep], vals[keep]
    bb, e = np.divmod(uniq, q)
    b1, b2 = np.divmod(bb, n)
    return _sorted_Q(n, l, b1, b2, e, vals)


def _check_u(u, l):  # noqa: E741
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (l,):
        raise DimensionMismatch(f"bounding-box vector has shape {u.shape}, expected ({l},)")
    return u


def instantiate_linear(L: LinearTensorL, u) -> np.ndarray:
    """``(P E^T)[a, b] = sum_d L[a, b, d] u[d]``."""
    u = _check_u(u, L.l)
    return (L.operator @ u).reshape(6, L.n)


def instantiate_quadratic(Q: QuadraticTensorQ, u) -> np.ndarray:
    """``E E^T`` for bounding-box intensities ``u``; symmetric by construction."""
    u = _check_u(u, Q.l)
    op, d1, d2 = Q._operator
    upper = (op @ (u[d1] * u[d2])).reshape(Q.n, Q.n)
    return upper + np.triu(upper, 1).T


@dataclass(frozen=True, eq=False)
class SymbolicModel:
    L: LinearTensorL
    Q: QuadraticTensorQ
    bbox: BoundingBox
    spec: PatchSpec
    ranges: WarpRanges
    m: int
    seed: int
    tr_ppt: float
    dct: DctMapping | None = None
    build_seconds: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.L.n != self.spec.n or self.Q.n != self.spec.n:
            raise DimensionMismatch("tensor width does not match patch spec")
        if self.L.l != self.bbox.l or self.Q.l != self.bbox.l:
            raise DimensionMismatch("tensor depth does not match bounding box")

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def l(self) -> int:  # noqa: E743
        return self.bbox.l

    def warps(self) -> np.ndarray:
        """Regenerate the training warp matrix from the stored seed."""
        return warp.sample_warps(self.ranges, self.m, self.seed)

    def with_dct(self, r: int | None) -> "SymbolicModel":
        dct = None if not r else build_dct_mapping(self.spec.side, r)
        return SymbolicModel(self.L, self.Q, self.bbox, self.spec, self.ranges, self.m,
                             self.seed, self.tr_ppt, dct, self.build_seconds)


def build_model(spec: PatchSpec, ranges: WarpRanges, m: int, seed: int,
                r: int | None = None, P=None) -> SymbolicModel:
    """Sample the training warps and build ``L`` and ``Q``.

    ``P`` overrides the seeded warp matrix; the stored seed is then only
    informative.
    """
    t0 = time.perf_counter()
    if P is None:
        P = warp.sample_warps(ranges, m, seed)
    P = np.asarray(P, dtype=np.float64)
    bbox = compute_bbox(spec, ranges)
    Y = build_Y(spec, P, bbox)
    L = build_L(P, Y)
    Q = build_Q(Y)
    dct = None
    if r:
        if spec.pattern != "dense":
            raise ValueError("DCT reduction needs a dense patch")
        dct = build_dct_mapping(spec.side, r)
    return SymbolicModel(L, Q, bbox, spec, ranges, P.shape[1], int(seed),
                         float(np.sum(P * P)), dct, time.perf_counter() - t0)


def symbolic_terms(model: SymbolicModel, u) -> tuple[np.ndarray, np.ndarray]:
    """Instantiate ``P E^T`` and ``E E^T`` for one patch.

    Every fibre of ``Y`` sums to zero, so removing the mean of ``u`` leaves
    both terms unchanged while shrinking the cancellation in the quadratic sum.
    """
    u = np.asarray(u, dtype=np.float64)
    u = u - u.mean()
    return instantiate_linear(model.L, u), instantiate_quadratic(model.Q, u)


def learn_symbolic(model: SymbolicModel, u, ridge: float | None = None) -> LinearPredictor:
    lin, quad = symbolic_terms(model, u)
    A = spd_solve(quad, lin.T, ridge).T
    return LinearPredictor(A, "sym", model.m, model.spec, model.ranges)


def learn_symbolic_dct(model: SymbolicModel, u, ridge: float | None = None) -> LinearPredictor:
    if model.dct is None:
        raise ValueError("model carries no DCT mapping")
    Wr = model.dct.W_r
    lin, quad = symbolic_terms(model, u)
    lin_r = lin @ Wr.T
    quad_r = Wr @ quad @ Wr.T
    A = spd_solve(quad_r, lin_r.T, ridge).T @ Wr
    return LinearPredictor(A, f"symdct-{model.dct.r}", model.m, model.spec, model.ranges)


def _range_scalars(ranges: WarpRanges):
    return [v for pair in zip(ranges.lo, ranges.hi) for v in pair]


def save_model(model: SymbolicModel, path) -> None:
    L, Q = model.L, model.Q
    header = _HEADER.pack(MAGIC, VERSION, model.n, model.m, model.l, Q.q,
                          model.dct.r if model.dct is not None else 0,
                          model.spec.side, model.spec.pattern_id,
                          *_range_scalars(model.ranges), model.seed, model.tr_ppt)
    le = np.empty(L.nnz, dtype=_L_ENTRY)
    le["a"], le["b"], le["d"], le["v"] = L.a, L.b, L.d, L.v
    qe = np.empty(Q.nnz, dtype=_Q_ENTRY)
    qe["b1"], qe["b2"], qe["e"], qe["v"] = Q.b1, Q.b2, Q.e, Q.v
    body = b"".join([header, struct.pack("<Q", L.nnz), le.tobytes(),
                     struct.pack("<Q", Q.nnz), qe.tobytes()])
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> SymbolicModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"model file too short ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    fields = _HEADER.unpack_from(body)
    version = fields[1]
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch; file is corrupt or truncated")
    n, m, l, q, r, side, pattern_id = fields[2:9]  # noqa: E741
    scalars = fields[9:21]
    seed, tr_ppt = fields[21], fields[22]
    try:
        spec = PatchSpec(side, _PATTERN_NAMES[pattern_id])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad patch description: {exc}") from None
    ranges = WarpRanges(scalars[0::2], scalars[1::2])
    bbox = compute_bbox(spec, ranges)
    if spec.n != n or bbox.l != l or l * (l + 1) // 2 != q:
        raise FormatError("header dimensions are inconsistent with patch and ranges")

    pos = _HEADER.size
    try:
        (nl,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        le = np.frombuffer(body, dtype=_L_ENTRY, count=nl, offset=pos)
        pos += nl * _L_ENTRY.itemsize
        (nq,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        qe = np.frombuffer(body, dtype=_Q_ENTRY, count=nq, offset=pos)
        pos += nq * _Q_ENTRY.itemsize
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated tensor data: {exc}") from None
    if pos != len(body):
        raise FormatError("trailing bytes after tensor data")
    L = LinearTensorL(n, l, le["a"].astype(np.int64), le["b"].astype(np.int64),
                      le["d"].astype(np.int64), le["v"].copy())
    Q = QuadraticTensorQ(n, l, qe["b1"].astype(np.int64), qe["b2"].astype(np.int64),
                         qe["e"].astype(np.int64), qe["v"].copy())
    dct = build_dct_mapping(side, r) if r else None
    return SymbolicModel(L, Q, bbox, spec, ranges, m, seed, tr_ppt, dct)
