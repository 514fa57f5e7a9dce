"""Discretization and solution of the drift-diffusion Dirichlet problem and its dual.

Primal:  -Lap u + lam * div(u b) + lam * c u = f,   u = 0 on the boundary
Dual:    -Lap v - lam * b . grad v + lam * c v = g, v = 0 on the boundary

The Laplacian uses the symmetric cut closure toward the exact boundary (on a
box this reduces to the standard ghost closure), div(u b) is conservative
flux-form with face-averaged coefficients, and the dual's centered advection
is built as the exact transpose of the primal flux so the two matrices are
discrete adjoints whenever upwind blending is off.

Stability diagnostics use a weak inf-sup constant rather than the raw matrix
singular value: the raw strong-form sigma_min provably stays bounded away
from zero in the nonuniqueness regime (the near-null profile costs O(1/h^2)
in the strong residual), while the inf-sup constant measured in the discrete
W^{1,2} pairing tracks the continuum degeneration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import Grid, RadialGrid, gradient, divergence, second_difference, \
    mixed_difference
from .fields import ScalarField, VectorField, zero_vector, zero_field

DIRECT_SOLVE_CAP = 40 ** 3       # direct sparse LU below this many unknowns
SIGMA_ESTIMATE_CAP = 25_000      # inf-sup estimation allowed below this size
NEAR_SINGULAR_RTOL = 1e-2        # fraction of the same-grid Laplacian inf-sup


class NearSingular(RuntimeError):
    """Signal (not a failure) that the operator lost discrete stability.

    Flags the nonuniqueness regime of the singular radial drift; carries the
    report and the continuation parameter at which it fired.
    """

    def __init__(self, report, lam):
        super().__init__(f"near-singular operator at lambda={lam:g} "
                         f"(sigma={report.smallest_singular_estimate:.3e})")
        self.report = report
        self.lam = lam


class SolveFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data


@dataclass
class WeakData:
    """Right-hand side, either a volume density f or divergence-form div G."""

    volume: ScalarField = None
    divergence: VectorField = None
    p: float = 2.0

    def __post_init__(self):
        if (self.volume is None) == (self.divergence is None):
            raise ValueError("provide exactly one of volume or divergence data")

    @property
    def grid(self):
        return (self.volume or self.divergence).grid

    def strong_values(self) -> np.ndarray:
        """Nodal samples of the density (div G computed discretely)."""
        if self.volume is not None:
            return self.volume.values
        return divergence(self.grid, self.divergence.components)

    def pair_with(self, phi: ScalarField) -> float:
        """<data, phi>, integrating by parts for divergence-form data."""
        w = self.grid.weights
        if self.volume is not None:
            return float(np.sum(self.volume.values * phi.values * w))
        gphi = gradient(self.grid, phi.values)
        return -float(np.sum(np.sum(self.divergence.components * gphi, axis=1) * w))


@dataclass
class SolveReport:
    solution: ScalarField
    residual_norm: float
    iterations: int
    smallest_singular_estimate: float = None
    near_singular: bool = False
    null_vector: ScalarField = None
    method: str = "direct"
    lam: float = 1.0


@dataclass
class DiscreteOperator:
    """Sparse pieces of the operator at continuation parameter lam.

    matrix(lam) = laplacian + lam * (advection + potential); lam = 0 is the
    plain Dirichlet Laplacian.
    """

    grid: object
    kind: str
    lam: float
    laplacian: sp.csr_matrix
    advection: sp.csr_matrix
    potential: sp.csr_matrix
    unknowns: np.ndarray
    b: VectorField
    c: ScalarField
    blend: str = "off"
    _sigma_ref: float = field(default=None, repr=False)

    @property
    def n_unknowns(self) -> int:
        return len(self.unknowns)

    def matrix(self, lam: float = None) -> sp.csr_matrix:
        lam = self.lam if lam is None else lam
        return (self.laplacian + lam * (self.advection + self.potential)).tocsr()

    def scatter(self, x: np.ndarray, field_id: str = "solution") -> ScalarField:
        full = np.zeros(self.grid.n_nodes)
        full[self.unknowns] = x
        return ScalarField(self.grid, full, field_id)

    def pairing_weights(self) -> np.ndarray:
        """Weights of the algebraic pairing: quadrature on radial grids,
        uniform h^3 on Cartesian grids (where the transpose duality is the
        unweighted one)."""
        if isinstance(self.grid, RadialGrid):
            return self.grid.weights[self.unknowns]
        return np.full(self.n_unknowns, self.grid.h ** 3)


def _reduced_index(grid):
    if isinstance(grid, RadialGrid):
        unk = np.arange(grid.n_nodes)
        red = unk.copy()
        return unk, red
    unk = np.flatnonzero(grid.inside)
    red = np.full(grid.n_nodes, -1, dtype=np.int64)
    red[unk] = np.arange(len(unk))
    return unk, red


# ---------------------------------------------------------------------------
# assembly


def assemble(kind: str, grid, b: VectorField = None, c: ScalarField = None,
             lam: float = 1.0, blend: str = None) -> DiscreteOperator:
    """Assemble the primal or dual operator at continuation parameter lam.

    blend: 'off' keeps centered advection everywhere (transpose duality is
    then exact); 'auto' switches dual rows to first-order upwind where the
    cell Peclet number |b| h / 2 exceeds 1.  Radial operators default to
    'off' (1-d direct solves do not need the stabilization and the singular
    drift probes rely on the adjoint structure).
    """
    if kind not in ("primal", "dual"):
        raise ValueError("kind must be 'primal' or 'dual'")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    b = b if b is not None else zero_vector(grid)
    c = c if c is not None else zero_field(grid)
    if blend is None:
        blend = "off" if isinstance(grid, RadialGrid) else \
            ("auto" if kind == "dual" else "off")
    if kind == "primal":
        blend = "off"  # flux form is used unblended for the primal

    unk, red = _reduced_index(grid)
    if isinstance(grid, RadialGrid):
        L, D = _radial_pieces(grid, b)
        dual_adv = _weighted_transpose(D, grid.weights)
    else:
        L, D = _cartesian_pieces(grid, b, unk, red)
        dual_adv = D.T.tocsr()
        if kind == "dual" and blend == "auto":
            dual_adv = _blend_upwind(grid, b, unk, red, dual_adv)

    C = sp.diags(c.values[unk]).tocsr()
    adv = D if kind == "primal" else dual_adv
    return DiscreteOperator(grid=grid, kind=kind, lam=lam, laplacian=L,
                            advection=adv.tocsr(), potential=C,
                            unknowns=unk, b=b, c=c, blend=blend)


def _cartesian_pieces(grid: Grid, b: VectorField, unk, red):
    h = grid.h
    Nu = len(unk)
    diagL = np.zeros(Nu)
    diagD = np.zeros(Nu)
    rows, cols, lvals, dvals = [], [], [], []
    rr = np.arange(Nu)
    for axis in range(3):
        for s, colidx in ((-1, 2 * axis), (+1, 2 * axis + 1)):
            nbr = grid.neighbors[unk, colidx]
            exists = nbr >= 0
            nbr_safe = np.maximum(nbr, 0)
            is_unknown = exists & grid.inside[nbr_safe]
            theta = grid.link_frac[unk, colidx]

            # Laplacian: -1/h^2 toward interior neighbors, 1/(theta h^2)
            # on the diagonal for boundary-cut links.
            diagL += np.where(is_unknown, 1.0, 1.0 / theta) / h ** 2
            rows.append(rr[is_unknown])
            cols.append(red[nbr[is_unknown]])
            lvals.append(np.full(int(is_unknown.sum()), -1.0 / h ** 2))

            # flux-form div(u b): face value b_f averages the node samples;
            # eliminated neighbors contribute u = 0 but keep their b sample.
            b_self = b.components[unk, axis]
            b_nbr = np.where(exists, b.components[nbr_safe, axis], b_self)
            b_face = 0.5 * (b_self + b_nbr)
            diagD += s * b_face / (2.0 * h)
            dvals.append(s * b_face[is_unknown] / (2.0 * h))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    L = sp.coo_matrix((np.concatenate(lvals), (rows, cols)), shape=(Nu, Nu))
    L = (L + sp.diags(diagL)).tocsr()
    D = sp.coo_matrix((np.concatenate(dvals), (rows, cols)), shape=(Nu, Nu))
    D = (D + sp.diags(diagD)).tocsr()
    return L, D


def _blend_upwind(grid: Grid, b: VectorField, unk, red, centered: sp.spmatrix):
    """Peclet-triggered blend of the dual advection toward first-order upwind."""
    h = grid.h
    Nu = len(unk)
    speed = np.linalg.norm(b.components[unk], axis=1)
    pe = speed * h / 2.0
    beta = np.where(pe > 1.0, 1.0 - 1.0 / np.maximum(pe, 1.0), 0.0)
    if not np.any(beta > 0):
        return centered
    rows, cols, vals = [], [], []
    diag = np.zeros(Nu)
    rr = np.arange(Nu)
    for axis in range(3):
        bd = b.components[unk, axis]
        for s, colidx in ((-1, 2 * axis), (+1, 2 * axis + 1)):
            nbr = grid.neighbors[unk, colidx]
            is_unknown = (nbr >= 0) & grid.inside[np.maximum(nbr, 0)]
            # -b_d dv/dx_d, difference side chosen so the matrix stays an M-matrix
            take = (bd > 0) if s > 0 else (bd < 0)
            coeff = np.where(take, -s * bd / h, 0.0)
            diag += -coeff
            sel = take & is_unknown
            rows.append(rr[sel])
            cols.append(red[nbr[sel]])
            vals.append(coeff[sel])
    up = sp.coo_matrix((np.concatenate(vals),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(Nu, Nu)) + sp.diags(diag)
    B1 = sp.diags(1.0 - beta)
    B2 = sp.diags(beta)
    return (B1 @ centered + B2 @ up.tocsr()).tocsr()


def _radial_pieces(grid: RadialGrid, b: VectorField):
    n, h, r = grid.n, grid.h, grid.r
    N = grid.n_nodes
    faces = grid.inner_radius + np.arange(N + 1) * h
    a = faces ** (n - 1)                      # diffusive face areas
    wt = r ** (n - 1)                         # node volume density

    bvals = b.components[:, 0]
    b_face = np.zeros(N + 1)
    b_face[1:-1] = 0.5 * (bvals[:-1] + bvals[1:])
    g = a * b_face                            # advective face transport
    g[0] = 0.0                                # ball: zero area; annulus: u=0 there
    g[-1] = 0.0                               # Dirichlet: u vanishes at the face

    lower = -a[1:-1] / (wt[1:] * h * h)
    upper = -a[1:-1] / (wt[:-1] * h * h)
    diag = (a[1:] + a[:-1]) / (wt * h * h)
    # Dirichlet closures at theta = 1/2 double the boundary-face transmissibility
    diag[-1] += a[-1] / (wt[-1] * h * h)
    if grid.has_inner_boundary:
        diag[0] += a[0] / (wt[0] * h * h)
    L = sp.diags([lower, diag, upper], [-1, 0, 1]).tocsr()

    d_low = -g[1:-1] / (2.0 * wt[1:] * h)
    d_up = g[1:-1] / (2.0 * wt[:-1] * h)
    d_diag = (g[1:] - g[:-1]) / (2.0 * wt * h)
    D = sp.diags([d_low, d_diag, d_up], [-1, 0, 1]).tocsr()
    return L, D


def _weighted_transpose(A: sp.spmatrix, w: np.ndarray) -> sp.csr_matrix:
    Winv = sp.diags(1.0 / w)
    W = sp.diags(w)
    return (Winv @ A.T @ W).tocsr()


# ---------------------------------------------------------------------------
# linear solves


def _linear_solve(A: sp.csr_matrix, rhs: np.ndarray, L: sp.csr_matrix,
                  x0=None, rtol: float = 1e-12):
    """Direct below the cap, AMG-preconditioned Krylov above."""
    N = A.shape[0]
    if N <= DIRECT_SOLVE_CAP:
        lu = spla.splu(A.tocsc())
        x = lu.solve(rhs)
        # one step of iterative refinement tightens ill-conditioned solves
        resid = rhs - A @ x
        if np.linalg.norm(resid) > rtol * (np.linalg.norm(rhs) or 1.0):
            x = x + lu.solve(resid)
        return x, 1, "direct"
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(L.tocsr(), max_coarse=500)
    M = ml.aspreconditioner(cycle="V")
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    x, info = spla.gmres(A, rhs, x0=x0, M=M, rtol=rtol, atol=0.0,
                         restart=60, maxiter=400, callback=cb,
                         callback_type="pr_norm")
    if info != 0:
        x, info = spla.bicgstab(A, rhs, x0=x, M=M, rtol=rtol, atol=0.0,
                                maxiter=800)
        if info != 0:
            raise SolveFailure(f"iterative solve stagnated (info={info})")
    return x, counter["n"], "amg-gmres"


def solve(op: DiscreteOperator, data: WeakData, x0: np.ndarray = None,
          rtol: float = 1e-12, check_singularity: bool = None) -> SolveReport:
    """Solve the assembled operator against the data.

    Raises NearSingular when the weak inf-sup constant of the operator drops
    below NEAR_SINGULAR_RTOL times the same-grid Laplacian's constant; the
    check runs by default on radial grids (the singular-drift instrument) and
    on request elsewhere.
    """
    A = op.matrix()
    rhs = data.strong_values()[op.unknowns]
    x, iters, method = _linear_solve(A, rhs, op.laplacian, x0=x0, rtol=rtol)
    # normwise backward error: relative residual robust to the operator scale
    scale = float(np.max(np.abs(A).sum(axis=1)))
    denom = scale * float(np.linalg.norm(x)) + float(np.linalg.norm(rhs)) or 1.0
    res = float(np.linalg.norm(A @ x - rhs)) / denom

    if check_singularity is None:
        check_singularity = isinstance(op.grid, RadialGrid)
    sigma = None
    near = False
    nullf = None
    if check_singularity and op.n_unknowns <= SIGMA_ESTIMATE_CAP:
        sigma, nullvec = weak_infsup_constant(op)
        ref = _laplacian_infsup(op)
        near = sigma < NEAR_SINGULAR_RTOL * ref
        nullf = op.scatter(nullvec, "null-candidate")
    report = SolveReport(solution=op.scatter(x), residual_norm=res,
                         iterations=iters, smallest_singular_estimate=sigma,
                         near_singular=near, null_vector=nullf,
                         method=method, lam=op.lam)
    if near:
        raise NearSingular(report, op.lam)
    if res > 1e-10:
        raise SolveFailure(f"residual {res:.2e} above 1e-10")
    return report


def continuation_solve(grid, b, c, data: WeakData, steps: int = 10,
                       kind: str = "primal", blend: str = None,
                       check_singularity: bool = None,
                       keep_trace: bool = False) -> SolveReport:
    """March lambda over k/steps, warm-starting each iterative solve.

    steps = 1 reproduces the direct solve bitwise (same assembly, same code
    path, no start vector).  A NearSingular signal propagates with the lambda
    at which it occurred attached.  With keep_trace the per-lambda reports
    are attached to the final report as ``trace``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    op = assemble(kind, grid, b, c, lam=1.0, blend=blend)
    x_prev = None
    report = None
    trace = []
    for k in range(1, steps + 1):
        lam = k / steps
        op.lam = lam
        report = solve(op, data, x0=x_prev, check_singularity=check_singularity)
        x_prev = report.solution.values[op.unknowns]
        if keep_trace:
            trace.append(report)
    if keep_trace:
        report.trace = trace
    return report


# ---------------------------------------------------------------------------
# weak inf-sup diagnostics


def _stability_matrices(op: DiscreteOperator, lam=None):
    """Pairing-weighted form matrix B and the W^{1,2} Gram matrix H."""
    w = op.pairing_weights()
    W = sp.diags(w)
    B = (W @ op.matrix(lam)).tocsr()
    K = (W @ op.laplacian).tocsr()
    H = ((K + K.T) * 0.5 + W).tocsr()
    return B, H


def weak_infsup_constant(op: DiscreteOperator, n_iter: int = 40, seed: int = 0):
    """Smallest generalized singular value of the form matrix in the discrete
    W^{1,2} pairing, by inverse iteration on the pencil.

    Returns (sigma, minimizing vector).  An exactly singular matrix reports
    sigma = 0 with the factorization's null direction.
    """
    B, H = _stability_matrices(op)
    return _infsup_of(B, H, n_iter=n_iter, seed=seed)


def _laplacian_infsup(op: DiscreteOperator) -> float:
    if op._sigma_ref is None:
        w = op.pairing_weights()
        W = sp.diags(w)
        K = (W @ op.laplacian).tocsr()
        H = ((K + K.T) * 0.5 + W).tocsr()
        op._sigma_ref = _infsup_of(K.tocsr(), H)[0]
    return op._sigma_ref


def _infsup_of(B: sp.csr_matrix, H: sp.csr_matrix, n_iter: int = 40,
               seed: int = 0):
    N = B.shape[0]
    scale = float(np.max(np.abs(B.diagonal()))) or 1.0
    try:
        with np.errstate(all="ignore"):
            Bf = spla.splu(B.tocsc())
            probe = Bf.solve(np.ones(N))
        if not np.all(np.isfinite(probe)):
            raise RuntimeError("singular factorization")
    except RuntimeError:
        # exactly singular: regularize only to extract the null direction
        Bf = spla.splu((B + 1e-14 * scale * sp.eye(N)).tocsc())
        x = _pencil_iterate(Bf, H, N, n_iter, seed)
        return 0.0, x
    Hf = spla.splu(H.tocsc())
    x = _pencil_iterate(Bf, H, N, n_iter, seed)
    g = B @ x
    sigma2 = float(g @ Hf.solve(g))
    return math.sqrt(max(sigma2, 0.0)), x


def _pencil_iterate(Bf, H, N, n_iter, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    x /= math.sqrt(float(x @ (H @ x)))
    for _ in range(n_iter):
        t = Bf.solve(H @ x, trans="T")
        x = Bf.solve(H @ t)
        nrm = math.sqrt(float(x @ (H @ x)))
        if not np.isfinite(nrm) or nrm == 0.0:
            break
        x /= nrm
    return x


# ---------------------------------------------------------------------------
# residuals and norms


def weak_residual(u: ScalarField, b: VectorField, c: ScalarField,
                  data: WeakData, phi: ScalarField, lam: float = 1.0) -> float:
    """integral [ (grad u - u b) . grad phi + c u phi ] - <data, phi>.

    The test function must vanish on the boundary band; divergence-form data
    pairs as -integral G . grad phi.
    """
    grid = u.grid
    if np.any(np.abs(phi.values[np.asarray(grid.band)]) > 0):
        raise ValueError("test function must vanish on the boundary band")
    gu = gradient(grid, u.values)
    gphi = gradient(grid, phi.values)
    flux = gu - lam * u.values[:, None] * b.components
    w = grid.weights
    bulk = float(np.sum(np.sum(flux * gphi, axis=1) * w))
    bulk += lam * float(np.sum(c.values * u.values * phi.values * w))
    return bulk - data.pair_with(phi)


def very_weak_residual(u: ScalarField, b: VectorField, c: ScalarField,
                       phi: ScalarField) -> float:
    """integral u ( -Lap phi - b . grad phi + c phi ) for C^2-like discrete
    test functions vanishing near the boundary."""
    grid = u.grid
    if isinstance(grid, RadialGrid):
        lap = _radial_laplacian_of(grid, phi.values)
    else:
        lap = sum(second_difference(grid, phi.values, d) for d in range(3))
    gphi = gradient(grid, phi.values)
    adv = np.sum(b.components * gphi, axis=1)
    integrand = u.values * (-lap - adv + c.values * phi.values)
    return float(np.sum(integrand * grid.weights))


def _radial_laplacian_of(grid: RadialGrid, values: np.ndarray) -> np.ndarray:
    from .grids import _gradient_1d
    g = _gradient_1d(grid, values)
    return _gradient_1d(grid, grid.r ** (grid.n - 1) * g) / grid.r ** (grid.n - 1)


def w_minus_one_p_norm(data: WeakData, p: float, grid) -> float:
    """The W^{-1,p} surrogate via the divergence representation.

    Divergence-form data returns ||G||_{L^p} directly; volume data f is
    lifted through -Lap w = f and returns ||grad w||_{L^p}.  Internally
    consistent (equivalent up to constants), never claimed to match the
    continuum dual norm.
    """
    if not 1.0 < p < math.inf:
        raise ValueError("p must lie in (1, oo)")
    if data.divergence is not None:
        mag = data.divergence.magnitude()
        return float(np.sum(mag.values ** p * grid.weights) ** (1.0 / p))
    op = assemble("primal", grid, lam=0.0)
    report = solve(op, data, check_singularity=False)
    gw = gradient(grid, report.solution.values)
    mag = np.linalg.norm(gw, axis=1) if gw.shape[1] > 1 else np.abs(gw[:, 0])
    return float(np.sum(mag ** p * grid.weights) ** (1.0 / p))


def sobolev_norm(u: ScalarField, p: float, order: int = 1) -> float:
    """(sum over multi-indices |alpha| <= order of ||D^alpha u||_p^p)^{1/p}.

    Derivatives are centered, falling back to one-sided differences on the
    boundary band; order 2 adds the pure and mixed second differences.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1, or 2")
    grid = u.grid
    w = grid.weights
    total = float(np.sum(np.abs(u.values) ** p * w))
    if order >= 1:
        g = gradient(grid, u.values)
        for d in range(g.shape[1]):
            total += float(np.sum(np.abs(g[:, d]) ** p * w))
    if order >= 2:
        if isinstance(grid, RadialGrid):
            raise ValueError("second-order norms need a full grid")
        for d in range(3):
            total += float(np.sum(np.abs(second_difference(grid, u.values, d)) ** p * w))
        for d in range(3):
            for e in range(d + 1, 3):
                md = mixed_difference(grid, u.values, d, e)
                total += float(np.sum(np.abs(md) ** p * w))
    return total ** (1.0 / p)
