"""Finite-dimensional symplectic linear algebra.

Sign convention, used everywhere in the package: phase vectors are ordered
``(p, q)`` and

    σ((p, q), (p', q')) = <p, q'> - <p', q>,

so ``σ(u, v) = u @ form @ v`` with ``form = [[0, I], [-I, 0]]``. With
``d_z h = σ(·, X_h)`` this gives ``X_h = (-∂h/∂q, ∂h/∂p)``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import TransversalityError

# smallest/largest singular value of a stacked frame below this => not transversal
TRANSVERSALITY_TOL = 1e-8


def _standard_matrix(n):
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True)
class SymplecticSpace:
    dim_half: int
    form: np.ndarray = None

    def __post_init__(self):
        if self.dim_half < 1:
            raise ValueError("dim_half must be >= 1")
        form = _standard_matrix(self.dim_half) if self.form is None else np.asarray(self.form, dtype=float)
        if form.shape != (2 * self.dim_half, 2 * self.dim_half):
            raise ValueError(f"form has shape {form.shape}, expected {(2 * self.dim_half,) * 2}")
        scale = max(np.abs(form).max(), 1.0)
        if np.abs(form + form.T).max() > 1e-12 * scale:
            raise ValueError("form is not antisymmetric")
        if np.linalg.matrix_rank(form) < form.shape[0]:
            raise ValueError("form is degenerate")
        form.setflags(write=False)
        object.__setattr__(self, "form", form)

    @property
    def dim(self):
        return 2 * self.dim_half

    def omega(self, u, v):
        """σ(u, v); broadcasts over leading axes of ``u`` and ``v``."""
        return np.einsum("...i,ij,...j->...", u, self.form, v)


def standard_form(n):
    """The 2n-dimensional space with the Darboux form ``Σ dp_i ∧ dq^i``."""
    return SymplecticSpace(n)


def orthonormalize(frame):
    """Orthonormal basis of the column span; raises on rank deficiency."""
    frame = np.atleast_2d(np.asarray(frame, dtype=float))
    if frame.shape[0] < frame.shape[1]:
        frame = frame.T
    q, r = np.linalg.qr(frame)
    d = np.abs(np.diag(r))
    if d.size and d.min() <= 1e-12 * max(d.max(), 1e-300):
        raise np.linalg.LinAlgError(f"frame is rank deficient (rank < {frame.shape[1]})")
    return q


@dataclass(frozen=True)
class LagrangianSubspace:
    """An isotropic subspace given by a frame (columns).

    The frame is orthonormalized on construction. ``graph_coord`` optionally
    records the symmetric matrix S of the subspace as a graph ``{(x, Sx)}``
    relative to some reference splitting the caller keeps track of.
    """

    frame: np.ndarray
    graph_coord: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        q = orthonormalize(self.frame)
        q.setflags(write=False)
        object.__setattr__(self, "frame", q)
        if self.graph_coord is not None:
            s = np.asarray(self.graph_coord, dtype=float)
            if np.abs(s - s.T).max() > 1e-8 * max(1.0, np.abs(s).max()):
                raise ValueError("graph coordinate is not symmetric")
            object.__setattr__(self, "graph_coord", s)

    @property
    def dim(self):
        return self.frame.shape[1]


def _frame_of(subspace):
    if isinstance(subspace, LagrangianSubspace):
        return subspace.frame
    return orthonormalize(subspace)


def isotropy_defect(space, frame):
    f = np.asarray(frame, dtype=float)
    return float(np.abs(f.T @ space.form @ f).max()) if f.size else 0.0


def is_lagrangian(space, subspace, tol=1e-10):
    """True iff the frame spans an n-dimensional σ-isotropic subspace."""
    frame = _frame_of(subspace)
    if frame.shape[1] != space.dim_half:
        return False
    return isotropy_defect(space, frame) <= tol


def stacked_condition(a, b):
    """Smallest over largest singular value of ``[a b]`` (both orthonormalized)."""
    s = np.linalg.svd(np.hstack([orthonormalize(a), orthonormalize(b)]), compute_uv=False)
    return s[-1] / s[0], s


def projector_matrix(onto, parallel, tol=TRANSVERSALITY_TOL):
    """Projector onto span(onto) along span(parallel) for raw frames.

    Works in any coordinates; the two frames must together span the space.
    """
    onto = np.asarray(onto, dtype=float)
    parallel = np.asarray(parallel, dtype=float)
    if onto.shape[1] + parallel.shape[1] != onto.shape[0]:
        raise ValueError("frames do not have complementary dimensions")
    cond, s = stacked_condition(onto, parallel)
    if cond < tol:
        defect = int(np.sum(s < tol * s[0]))
        raise TransversalityError(
            f"subspaces are not transversal: intersection of dimension {defect} "
            f"(stacked condition {cond:.3e})",
            defect=defect,
            condition=cond,
        )
    basis = np.hstack([onto, parallel])
    k = onto.shape[1]
    return onto @ np.linalg.inv(basis)[:k]


def projector(space, onto, parallel):
    """π onto ``onto`` parallel to ``parallel`` (2n×2n)."""
    a = _frame_of(onto)
    b = _frame_of(parallel)
    if a.shape[0] != space.dim or b.shape[0] != space.dim:
        raise ValueError("frames do not live in this space")
    return projector_matrix(a, b)


@dataclass(frozen=True)
class GramForm:
    matrix: np.ndarray
    signature: tuple

    @property
    def is_regular(self):
        return self.signature[2] == 0

    @property
    def is_monotone(self):
        n_plus, n_minus, n_zero = self.signature
        return n_zero == 0 and (n_plus == 0 or n_minus == 0)

    @property
    def sign(self):
        """+1 / -1 for a definite form, 0 otherwise."""
        if not self.is_monotone:
            return 0
        return 1 if self.signature[0] else -1


def signature(matrix, rtol=1e-10):
    w = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    scale = np.abs(w).max() if w.size else 0.0
    cut = rtol * scale if scale > 0 else 0.0
    zero = np.abs(w) <= cut
    return (int(np.sum((w > 0) & ~zero)), int(np.sum((w < 0) & ~zero)), int(np.sum(zero)))


def gram_gh(system, z, lambda_frame):
    """Gram matrix of g_z^h(X, Y) = σ([X_h, X], Y) on the columns of ``lambda_frame``.

    The frame is extended constantly in the chart, so ``[X_h, X] = -(DX_h) X``.
    """
    z = np.asarray(z, dtype=float)
    frame = np.asarray(lambda_frame, dtype=float)
    form = system.space.form
    bracket = -system.vf_jacobian(z) @ frame
    g = bracket.T @ form @ frame
    return GramForm(g, signature(g))


def darboux_complete(space, lagrangian_basis, form=None):
    """Extend a Lagrangian basis E to a Darboux basis [E F].

    Returns B with ``B.T @ form @ B`` equal to the standard form. ``form``
    overrides the space form (used for reduced spaces with a non-standard form).
    """
    omega = space.form if form is None else np.asarray(form, dtype=float)
    e = np.asarray(lagrangian_basis, dtype=float)
    m = omega.shape[0] // 2
    if e.shape != (2 * m, m):
        raise ValueError(f"expected a {2 * m}x{m} basis, got {e.shape}")
    scale = max(np.linalg.norm(e, 2) ** 2, 1e-300) * max(np.abs(omega).max(), 1.0)
    if np.abs(e.T @ omega @ e).max() > 1e-10 * scale:
        raise ValueError("input basis is not Lagrangian")
    w = omega.T @ e
    f = w @ np.linalg.inv(e.T @ omega @ w)
    a = f.T @ omega @ f
    f = f + e @ (0.5 * a)
    return np.hstack([e, f])


def darboux_dual(e, d, omega):
    """Basis F of span(d) with σ(E_i, F_j) = δ_ij."""
    c = e.T @ omega @ d
    return d @ np.linalg.inv(c)


def graph_coordinate(frame, e, f):
    """S with span(frame) = {E x + F S x}; raises if not a graph over span(E)."""
    coords = np.linalg.solve(np.hstack([e, f]), frame)
    m = e.shape[1]
    x, y = coords[:m], coords[m:]
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[-1] < TRANSVERSALITY_TOL * max(sv[0], 1e-300):
        raise TransversalityError(
            f"subspace is not a graph over the reference (x-block condition {sv[-1] / sv[0]:.3e})",
            defect=int(np.sum(sv < TRANSVERSALITY_TOL * sv[0])),
            condition=sv[-1] / sv[0],
        )
    return y @ np.linalg.inv(x)


def sym_sqrt(a, inverse=False):
    """Principal square root (or its inverse) of a symmetric positive definite matrix."""
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    if inverse:
        return (v / np.sqrt(w)) @ v.T
    return (v * np.sqrt(w)) @ v.T
