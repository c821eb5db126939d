"""Dense Levenberg-Marquardt with parameter blocks.

A problem is a list of :class:`ResidualBlock` objects, each reading a few
:class:`ParameterBlock` objects. Blocks may live on a manifold (unit vectors,
rotations); the solver works in their tangent space. Jacobians come from the
residual's own ``jacobian`` callable when given, otherwise from central
finite differences over the blocks the residual touches.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from refcal.errors import RankDeficient
from refcal.geometry.rotation import exp_so3, log_so3

logger = logging.getLogger(__name__)


class Manifold(str, enum.Enum):
    EUCLIDEAN = "Euclidean"
    UNIT_VECTOR = "UnitVector"
    ROTATION = "RotationAxisAngle"


def _tangent_basis(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n x n-1) of the plane orthogonal to unit ``v``."""
    # Householder reflection mapping e_k to v; its other columns span v's complement
    k = int(np.argmax(np.abs(v)))
    e = np.zeros_like(v)
    e[k] = 1.0
    u = v - e if v[k] < 0 else v + e
    H = np.eye(len(v)) - 2.0 * np.outer(u, u) / (u @ u)
    return np.delete(H, k, axis=1)


@dataclass(eq=False)
class ParameterBlock:
    """A group of parameters optimized together.

    ``constant_mask`` freezes individual entries of Euclidean blocks; manifold
    blocks are frozen or free as a whole. ``projection`` maps values back onto
    the feasible set after every update (bounds, balls, ...).
    """

    values: np.ndarray
    constant_mask: np.ndarray | None = None
    manifold: Manifold = Manifold.EUCLIDEAN
    name: str = ""
    projection: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).ravel()
        self.manifold = Manifold(self.manifold)
        if self.constant_mask is None:
            self.constant_mask = np.zeros(len(self.values), dtype=bool)
        else:
            self.constant_mask = np.broadcast_to(np.asarray(self.constant_mask, dtype=bool), self.values.shape).copy()
        if len(self.constant_mask) != len(self.values):
            raise ValueError("constant_mask length must match values")
        if self.manifold is Manifold.UNIT_VECTOR:
            self.values = self.values / np.linalg.norm(self.values)
        elif self.manifold is Manifold.ROTATION and len(self.values) != 3:
            raise ValueError("rotation blocks hold a 3-element rotation vector")
        if self.manifold is not Manifold.EUCLIDEAN and 0 < self.constant_mask.sum() < len(self.values):
            raise ValueError("manifold blocks must be entirely constant or entirely free")

    @property
    def constant(self) -> bool:
        return bool(np.all(self.constant_mask))

    def set_constant(self, flag: bool = True) -> None:
        self.constant_mask[:] = flag

    @property
    def tangent_size(self) -> int:
        return len(self.values) - 1 if self.manifold is Manifold.UNIT_VECTOR else len(self.values)

    def free_tangent(self) -> np.ndarray:
        """Indices of tangent coordinates that the solver may move."""
        if self.manifold is Manifold.EUCLIDEAN:
            return np.flatnonzero(~self.constant_mask)
        return np.arange(0 if self.constant else self.tangent_size)

    def plus(self, values: np.ndarray, delta: np.ndarray) -> np.ndarray:
        out = _plus_raw(self, values, delta)
        if self.projection is not None:
            out = np.asarray(self.projection(out), dtype=float)
        return out

    def step_sizes(self, values: np.ndarray) -> np.ndarray:
        if self.manifold is Manifold.EUCLIDEAN:
            return np.maximum(1e-8, 1e-8 * np.abs(values))
        return np.full(self.tangent_size, 1e-8)


@dataclass(eq=False)
class ResidualBlock:
    """``fn(*values) -> residual vector`` over the listed parameter blocks.

    ``jacobian(*values)`` may return one matrix per block (residual rows x
    block tangent size); ``None`` entries fall back to finite differences.
    """

    fn: Callable[..., np.ndarray]
    blocks: Sequence[ParameterBlock]
    jacobian: Callable[..., Sequence[np.ndarray | None]] | None = None


@dataclass(eq=False)
class LeastSquaresProblem:
    residuals: list[ResidualBlock] = field(default_factory=list)

    def add(self, fn, blocks, jacobian=None) -> ResidualBlock:
        rb = ResidualBlock(fn, list(blocks), jacobian)
        self.residuals.append(rb)
        return rb

    @property
    def blocks(self) -> list[ParameterBlock]:
        seen: dict[int, ParameterBlock] = {}
        for rb in self.residuals:
            for b in rb.blocks:
                seen.setdefault(id(b), b)
        return list(seen.values())


@dataclass(frozen=True)
class LMConfig:
    max_iter: int = 200
    fn_tol: float = 1e-12
    grad_tol: float = 1e-12
    x_tol: float = 1e-14
    init_lambda: float = 1e-4


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Outcome of :func:`solve_lm`. Index with a block to get its final values."""

    blocks: tuple[ParameterBlock, ...]
    values: tuple[np.ndarray, ...]
    stddevs: tuple[np.ndarray, ...]
    initial_cost: float
    final_cost: float
    iterations: int
    termination: str
    cost_history: tuple[float, ...]
    n_residuals: int
    n_free: int

    def _index(self, block: ParameterBlock) -> int:
        for i, b in enumerate(self.blocks):
            if b is block:
                return i
        raise KeyError(block.name or "unknown block")

    def __getitem__(self, block: ParameterBlock) -> np.ndarray:
        return self.values[self._index(block)]

    def stddev(self, block: ParameterBlock) -> np.ndarray:
        return self.stddevs[self._index(block)]


class _Layout:
    """Column bookkeeping: which tangent coordinates of which block are free."""

    def __init__(self, blocks: list[ParameterBlock]):
        self.blocks = blocks
        self.index = {id(b): i for i, b in enumerate(blocks)}
        self.free = [b.free_tangent() for b in blocks]
        self.offsets = np.cumsum([0] + [len(f) for f in self.free])
        self.n_free = int(self.offsets[-1])

    def plus(self, values: list[np.ndarray], delta: np.ndarray) -> list[np.ndarray]:
        out = []
        for i, b in enumerate(self.blocks):
            if len(self.free[i]) == 0:
                out.append(values[i])
                continue
            d = np.zeros(b.tangent_size)
            d[self.free[i]] = delta[self.offsets[i] : self.offsets[i + 1]]
            out.append(b.plus(values[i], d))
        return out


def _evaluate(problem: LeastSquaresProblem, layout: _Layout, values, with_jacobian: bool):
    rs = []
    jac_parts = []
    row = 0
    for rb in problem.residuals:
        args = [values[layout.index[id(b)]] for b in rb.blocks]
        r = np.asarray(rb.fn(*args), dtype=float).ravel()
        rs.append(r)
        if with_jacobian:
            analytic = list(rb.jacobian(*args)) if rb.jacobian is not None else [None] * len(rb.blocks)
            for k, b in enumerate(rb.blocks):
                bi = layout.index[id(b)]
                free = layout.free[bi]
                if len(free) == 0:
                    continue
                if analytic[k] is not None:
                    J = np.asarray(analytic[k], dtype=float).reshape(len(r), b.tangent_size)[:, free]
                else:
                    J = _fd_block(rb, args, k, b, free, len(r))
                jac_parts.append((row, layout.offsets[bi], J))
        row += len(r)
    r = np.concatenate(rs) if rs else np.zeros(0)
    if not with_jacobian:
        return r, None
    J = np.zeros((len(r), layout.n_free))
    for r0, c0, Jb in jac_parts:
        J[r0 : r0 + Jb.shape[0], c0 : c0 + Jb.shape[1]] += Jb
    return r, J


def _fd_block(rb: ResidualBlock, args, k: int, block: ParameterBlock, free, m: int, scale: float = 1.0) -> np.ndarray:
    """Central differences in the tangent space of one block (feasibility projection skipped)."""
    base = args[k]
    steps = block.step_sizes(base) * scale
    J = np.empty((m, len(free)))
    for c, j in enumerate(free):
        d = np.zeros(block.tangent_size)
        d[j] = steps[j]
        a = list(args)
        a[k] = _plus_raw(block, base, d)
        rp = np.asarray(rb.fn(*a), dtype=float).ravel()
        a[k] = _plus_raw(block, base, -d)
        rm = np.asarray(rb.fn(*a), dtype=float).ravel()
        J[:, c] = (rp - rm) / (2.0 * steps[j])
    return J


def numeric_jacobian(rb: ResidualBlock, step_scale: float = 1.0) -> list[np.ndarray]:
    """Central-difference Jacobian of one residual block at the blocks' current values.

    ``step_scale`` multiplies the default steps; used to cross-check Jacobians.
    """
    args = [b.values for b in rb.blocks]
    m = len(np.asarray(rb.fn(*args)).ravel())
    return [_fd_block(rb, args, k, b, np.arange(b.tangent_size), m, step_scale) for k, b in enumerate(rb.blocks)]


def _plus_raw(block: ParameterBlock, values, delta):
    if block.manifold is Manifold.EUCLIDEAN:
        return values + delta
    if block.manifold is Manifold.UNIT_VECTOR:
        out = values + _tangent_basis(values) @ delta
        return out / np.linalg.norm(out)
    return log_so3(exp_so3(delta) @ exp_so3(values))


def _plus_jacobian(block: ParameterBlock, values: np.ndarray) -> np.ndarray:
    """d(values)/d(tangent) at zero, used to map tangent covariance to values."""
    if block.manifold is Manifold.EUCLIDEAN:
        return np.eye(len(values))
    h = 1e-7
    cols = []
    for j in range(block.tangent_size):
        d = np.zeros(block.tangent_size)
        d[j] = h
        cols.append((_plus_raw(block, values, d) - _plus_raw(block, values, -d)) / (2 * h))
    return np.stack(cols, axis=1)


def solve_lm(problem: LeastSquaresProblem, config: LMConfig | None = None) -> SolveResult:
    """Minimize ``0.5 * sum(r**2)`` over the free parameters.

    Blocks are not modified; read the solution from the returned result.

    Raises:
        RankDeficient: if the damped normal equations cannot be factored
            even with damping of 1e10.
    """
    cfg = config or LMConfig()
    blocks = problem.blocks
    layout = _Layout(blocks)
    values = [b.values.copy() for b in blocks]
    r, J = _evaluate(problem, layout, values, True)
    m, n = len(r), layout.n_free
    if m < n:
        raise ValueError(f"{m} residuals cannot determine {n} free parameters")
    cost = 0.5 * float(r @ r)
    initial_cost = cost
    history = [cost]
    lam = cfg.init_lambda
    termination = "max_iterations"
    it = 0
    while it < cfg.max_iter:
        if n == 0:
            termination = "no_free_parameters"
            break
        g = J.T @ r
        if np.max(np.abs(g)) <= cfg.grad_tol:
            termination = "gradient_tolerance"
            break
        if cost == 0.0:
            termination = "zero_cost"
            break
        A = J.T @ J
        D = np.diag(A).copy()
        x_norm = np.sqrt(sum(float(v @ v) for v in values))
        accepted = False
        while True:
            try:
                L = np.linalg.cholesky(A + lam * np.diag(D))
            except np.linalg.LinAlgError:
                if lam >= 1e10:
                    raise RankDeficient("normal equations are singular; the data do not constrain all parameters")
                lam = max(lam * 10.0, 1e-12)
                continue
            step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
            new_values = layout.plus(values, step)
            r_new, _ = _evaluate(problem, layout, new_values, False)
            new_cost = 0.5 * float(r_new @ r_new)
            if np.isfinite(new_cost) and new_cost < cost:
                accepted = True
                break
            if np.linalg.norm(step) <= cfg.x_tol * (x_norm + cfg.x_tol) or lam > 1e16:
                break
            lam *= 10.0
        it += 1
        if not accepted:
            termination = "no_further_decrease"
            break
        decrease = cost - new_cost
        values = new_values
        cost = new_cost
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if decrease <= cfg.fn_tol * (cost + decrease):
            termination = "function_tolerance"
            r, J = _evaluate(problem, layout, values, True)
            break
        if np.linalg.norm(step) <= cfg.x_tol * (x_norm + cfg.x_tol):
            termination = "step_tolerance"
            r, J = _evaluate(problem, layout, values, True)
            break
        r, J = _evaluate(problem, layout, values, True)
    logger.debug("LM finished after %d iterations (%s), cost %.3e -> %.3e", it, termination, initial_cost, cost)
    stddevs = _stddevs(blocks, layout, values, J, cost, m, n)
    return SolveResult(
        blocks=tuple(blocks),
        values=tuple(values),
        stddevs=tuple(stddevs),
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=it,
        termination=termination,
        cost_history=tuple(history),
        n_residuals=m,
        n_free=n,
    )


def _stddevs(blocks, layout, values, J, cost, m, n):
    out = [np.zeros(len(v)) for v in values]
    if n == 0 or m <= n:
        return out
    sigma2 = 2.0 * cost / (m - n)
    A = J.T @ J
    cov = sigma2 * np.linalg.pinv(A, rcond=1e-12, hermitian=True)
    for i, b in enumerate(blocks):
        free = layout.free[i]
        if len(free) == 0:
            continue
        sl = slice(layout.offsets[i], layout.offsets[i + 1])
        C = np.zeros((b.tangent_size, b.tangent_size))
        C[np.ix_(free, free)] = cov[sl, sl]
        P = _plus_jacobian(b, values[i])
        var = np.diag(P @ C @ P.T)
        out[i] = np.sqrt(np.clip(var, 0.0, None))
    return out
