"""Lowest eigenpairs of real-symmetric operators.

``lanczos_lowest`` is a thick-restart Lanczos iteration with full
reorthogonalization; ``dense_solve`` diagonalizes the explicit matrix and
serves as the reference on small grids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from latticetunnel.grid import GridSpec
from latticetunnel.hamiltonian import SparseHamiltonian, Wavefunction

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DENSE_LIMIT = 20_000


class EigenError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Lanczos did not reach the requested residual; ``spectrum`` holds the best estimate."""

    def __init__(self, message, spectrum=None):
        super().__init__(message)
        self.spectrum = spectrum


@dataclass
class Spectrum:
    """Ascending eigenvalues with unit-2-norm eigenvectors stored as columns.

    ``residuals[i]`` is ``||H x_i - E_i x_i||_2`` for the unit vector ``x_i``.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int = 0
    grid: GridSpec | None = None
    cell_volume: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def eigenvectors(self) -> list[Wavefunction]:
        return [self.wavefunction(i) for i in range(len(self))]

    def wavefunction(self, i: int) -> Wavefunction:
        """State ``i`` normalized as sum |psi|^2 dV = 1 on the stored grid.

        ``dV`` is the cell volume of the grid as stored (reference-mass
        coordinates), so densities of different masses are comparable.
        """
        if self.grid is None:
            raise EigenError("spectrum was computed without a grid")
        dv = self.grid.cell_volume if self.cell_volume is None else self.cell_volume
        return Wavefunction(self.grid, self.vectors[:, i] / np.sqrt(dv))


class _Operator:
    def __init__(self, H):
        self.grid = None
        self.cell_volume = None
        if isinstance(H, SparseHamiltonian):
            self.n = H.n
            self._mv = H.apply
            self.grid = H.grid
            self.shift = float(H.potential.values.min())
        elif sp.issparse(H) or isinstance(H, np.ndarray):
            if H.ndim != 2 or H.shape[0] != H.shape[1]:
                raise EigenError(f"operator must be square, got shape {H.shape}")
            self.n = H.shape[0]
            self._mv = H.dot
            self.shift = float(np.min(H.diagonal()))
        elif hasattr(H, "matvec") and hasattr(H, "shape"):
            self.n = H.shape[0]
            self._mv = H.matvec
            self.shift = 0.0
        else:
            raise TypeError(f"cannot use {type(H).__name__} as an operator")

    def __call__(self, v):
        return self._mv(v) - self.shift * v


def _random_orthogonal(rng, basis, n):
    w = rng.standard_normal(n)
    for _ in range(2):
        w -= basis.T @ (basis @ w)
    return w / np.linalg.norm(w)


def lanczos_lowest(
    H,
    k: int = 4,
    tol: float = DEFAULT_TOL,
    max_restarts: int = 1000,
    ncv: int | None = None,
    seed: int = 0,
    v0: np.ndarray | None = None,
) -> Spectrum:
    """``k`` lowest eigenpairs of a symmetric operator by thick-restart Lanczos.

    Parameters
    ----------
    H : SparseHamiltonian, ndarray, sparse matrix, or object with ``matvec``
        The operator. For a ``SparseHamiltonian`` the iteration runs on
        ``H - min(V)`` and the shift is added back.
    k : int
        Number of eigenpairs.
    tol : float
        Bound on ``||H x - E x||_2`` for unit vectors ``x``.
    max_restarts : int
        Number of restart cycles before giving up.
    ncv : int, optional
        Krylov basis size; defaults to ``max(2k + 10, 30)`` capped at the
        operator dimension.
    seed : int
        Seed for the random starting vector (ignored if ``v0`` is given).

    Raises
    ------
    ConvergenceError
        If not all residuals drop below ``tol``; ``exc.spectrum`` carries the
        best Ritz pairs found.
    """
    op = _Operator(H)
    n = op.n
    if k < 1:
        raise EigenError("k must be >= 1")
    if k > n:
        raise EigenError(f"k={k} exceeds the basis size {n}")
    m = min(n, ncv if ncv is not None else max(2 * k + 10, 30))
    if m <= k and m < n:
        raise EigenError(f"ncv={m} must exceed k={k}")

    rng = np.random.default_rng(seed)
    V = np.empty((m + 1, n))
    T = np.zeros((m, m))
    start = rng.standard_normal(n) if v0 is None else np.asarray(v0, dtype=np.float64).copy()
    V[0] = start / np.linalg.norm(start)
    p = 0
    beta = 0.0
    matvecs = 0
    best = None

    for cycle in range(max_restarts + 1):
        for j in range(p, m):
            w = op(V[j])
            matvecs += 1
            basis = V[: j + 1]
            h = basis @ w
            w -= h @ basis
            h2 = basis @ w
            w -= h2 @ basis
            h += h2
            T[: j + 1, j] = h
            beta = float(np.linalg.norm(w))
            scale = max(abs(h[j]), 1.0)
            if j + 1 < n and beta <= 1e-13 * scale:
                # invariant subspace found; continue with a fresh direction
                V[j + 1] = _random_orthogonal(rng, basis, n)
                beta = 0.0
            elif j + 1 < n:
                V[j + 1] = w / beta
            else:
                V[j + 1] = 0.0
                beta = 0.0

        Ts = np.triu(T) + np.triu(T, 1).T
        theta, Y = np.linalg.eigh(Ts)
        est = np.abs(beta * Y[-1, :])
        best = (theta, Y, est)

        if np.all(est[:k] <= tol) or m == n:
            X = Y[:, :k].T @ V[:m]
            resid = np.array([np.linalg.norm(op(x) - t * x) for x, t in zip(X, theta[:k])])
            matvecs += k
            if np.all(resid <= tol):
                log.debug("lanczos converged: k=%d n=%d cycles=%d matvecs=%d", k, n, cycle, matvecs)
                return Spectrum(
                    eigenvalues=theta[:k] + op.shift,
                    vectors=np.ascontiguousarray(X.T),
                    residuals=resid,
                    iterations=matvecs,
                    grid=op.grid,
                    cell_volume=op.cell_volume,
                )
            if m == n:
                break

        # thick restart: keep the lowest p Ritz vectors plus the residual direction
        p = min(m - 1, k + max((m - k) // 2, 1))
        kept = Y[:, :p].T @ V[:m]
        V[p] = V[m]
        V[:p] = kept
        T[:] = 0.0
        T[np.arange(p), np.arange(p)] = theta[:p]

    theta, Y, est = best
    X = Y[:, :k].T @ V[:m]
    resid = np.array([np.linalg.norm(op(x) - t * x) for x, t in zip(X, theta[:k])])
    spec = Spectrum(theta[:k] + op.shift, np.ascontiguousarray(X.T), resid, matvecs, op.grid, op.cell_volume)
    raise ConvergenceError(
        f"lanczos did not converge after {max_restarts} restarts; residuals {resid.tolist()}", spec
    )


def dense_solve(H, k: int | None = None, limit: int = DENSE_LIMIT) -> Spectrum:
    """Full (or lowest ``k``) spectrum by dense symmetric diagonalization."""
    grid = cell_volume = None
    if isinstance(H, SparseHamiltonian):
        if H.n > limit:
            raise EigenError(f"grid of {H.n} points exceeds the dense limit {limit}")
        A = H.to_dense()
        grid = H.grid
    elif sp.issparse(H):
        A = H.toarray()
    else:
        A = np.asarray(H, dtype=np.float64)
    if A.shape[0] > limit:
        raise EigenError(f"matrix of size {A.shape[0]} exceeds the dense limit {limit}")
    w, X = np.linalg.eigh(A)
    if k is not None:
        w, X = w[:k], X[:, :k]
    resid = np.linalg.norm(A @ X - X * w, axis=0)
    return Spectrum(w, X, resid, iterations=0, grid=grid, cell_volume=cell_volume)
