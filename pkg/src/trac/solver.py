r"""Joint-sparse coefficient solver.

Minimises, over per-modality coefficient matrices :math:`W^k`,

.. math::

    \sum_k \|B^k W^k - X^k\|_F^2 + \lambda_1 \|W\|_{2,1}
    + \lambda_2 \sum_l \alpha^l \|W - w_{t-l} 1_n^\top\|_{2,1}

with :math:`B^k = [D^k, I]`. Each of the ``m`` target rows is one group
spanning every modality and every column; each trivial row is its own group
within its modality. The temporal term only touches target rows.

The minimisation is an iteratively reweighted least-squares loop: reweight
the row groups from the current iterate, then solve the resulting ridge
system per modality in closed form. Row norms are floored at ``epsilon``,
which makes the loop a majorise-minimise scheme for the Huber-smoothed
objective (see :func:`objective`) and so monotone on it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

EPSILON = 1e-8


class SolverError(ValueError):
    """Raised for malformed or non-finite solver input."""


@dataclass
class TemporalTarget:
    """Coefficients of a past tracking result, one length-``m`` vector per modality.

    ``lag`` is the 1-based distance in frames-of-history (the exponent of
    ``alpha``). Excluded targets contribute nothing to the objective.
    """

    coefficients: list[np.ndarray]
    lag: int
    excluded: bool = False


@dataclass
class SparseProblem:
    dictionaries: list[np.ndarray]
    observations: list[np.ndarray]
    lambda1: float = 0.5
    lambda2: float = 0.0
    alpha: float = 0.1
    temporal_targets: list[TemporalTarget] = field(default_factory=list)
    trivial: bool = True

    def __post_init__(self):
        self.dictionaries = [np.asarray(d, dtype=float) for d in self.dictionaries]
        self.observations = [np.asarray(x, dtype=float) for x in self.observations]
        if not self.dictionaries or len(self.dictionaries) != len(self.observations):
            raise SolverError("need K >= 1 dictionaries with one observation matrix each")
        m = self.dictionaries[0].shape[1]
        n = self.observations[0].shape[1] if self.observations[0].ndim == 2 else -1
        if n < 1:
            raise SolverError("observations must be 2-D with at least one column")
        for k, (d, x) in enumerate(zip(self.dictionaries, self.observations)):
            if d.ndim != 2 or x.ndim != 2:
                raise SolverError(f"modality {k}: dictionary and observations must be 2-D")
            if d.shape[1] != m:
                raise SolverError(f"modality {k}: expected {m} templates, got {d.shape[1]}")
            if x.shape != (d.shape[0], n):
                raise SolverError(
                    f"modality {k}: observations shape {x.shape} != ({d.shape[0]}, {n})"
                )
            if not (np.all(np.isfinite(d)) and np.all(np.isfinite(x))):
                raise SolverError(f"modality {k}: non-finite input")
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise SolverError(f"{name} must be finite and >= 0, got {v}")
        if self.lambda2 > 0 and not 0 < self.alpha < 1:
            raise SolverError(f"alpha must lie in (0, 1), got {self.alpha}")
        for tt in self.temporal_targets:
            if len(tt.coefficients) != self.n_modalities:
                raise SolverError("temporal target needs one coefficient vector per modality")
            tt.coefficients = [np.asarray(c, dtype=float).reshape(-1) for c in tt.coefficients]
            if any(c.shape != (m,) or not np.all(np.isfinite(c)) for c in tt.coefficients):
                raise SolverError(f"temporal target coefficients must be finite, length {m}")
            if tt.lag < 1:
                raise SolverError("temporal lag must be >= 1")

    @property
    def n_modalities(self) -> int:
        return len(self.dictionaries)

    @property
    def n_templates(self) -> int:
        return self.dictionaries[0].shape[1]

    @property
    def n_columns(self) -> int:
        return self.observations[0].shape[1]

    @property
    def bases(self) -> list[np.ndarray]:
        """The augmented dictionaries ``B^k`` (materialised; only for small problems)."""
        if not self.trivial:
            return list(self.dictionaries)
        return [np.hstack([d, np.eye(d.shape[0])]) for d in self.dictionaries]

    def active_targets(self) -> list[TemporalTarget]:
        if self.lambda2 == 0:
            return []
        return [tt for tt in self.temporal_targets if not tt.excluded]


@dataclass
class SolverConfig:
    max_iters: int = 50
    tol: float = 1e-6
    epsilon: float = EPSILON
    # "min_norm" or "basic"; see _initial_fit
    init: str = "min_norm"
    basic_rtol: float = 1e-10
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise SolverError("max_iters must be >= 1")
        if not self.tol > 0 or not self.epsilon > 0:
            raise SolverError("tol and epsilon must be > 0")
        if self.init not in ("min_norm", "basic"):
            raise SolverError(f"unknown init {self.init!r}")


@dataclass
class IRLSState:
    diag_sparsity: np.ndarray
    diag_trivial: list[np.ndarray]
    diag_temporal: np.ndarray
    lags: np.ndarray
    epsilon: float


@dataclass
class CoefficientSolution:
    coefficients: list[np.ndarray]
    objective_trace: list[float]
    initial_objective: float
    iterations: int
    converged: bool

    def target_rows(self, n_templates: int) -> list[np.ndarray]:
        return [w[:n_templates] for w in self.coefficients]


def huber(r: np.ndarray, epsilon: float) -> np.ndarray:
    """Smoothed absolute value matching the ``max(r, epsilon)`` reweighting floor."""
    r = np.asarray(r, dtype=float)
    if epsilon <= 0:
        return r
    return np.where(r >= epsilon, r, r * r / (2 * epsilon) + epsilon / 2)


def target_row_norms(target_blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Joint Euclidean norm of each target row across modalities and columns."""
    sq = sum(np.einsum("ij,ij->i", z, z) for z in target_blocks)
    return np.sqrt(sq)


def _temporal_diff_norms(target_blocks, target: TemporalTarget) -> np.ndarray:
    sq = 0.0
    for z, c in zip(target_blocks, target.coefficients):
        diff = z - c[:, None]
        sq = sq + np.einsum("ij,ij->i", diff, diff)
    return np.sqrt(sq)


def _check_shapes(problem: SparseProblem, W: Sequence[np.ndarray]):
    if len(W) != problem.n_modalities:
        raise SolverError(f"expected {problem.n_modalities} coefficient blocks, got {len(W)}")
    m, n = problem.n_templates, problem.n_columns
    for k, (w, d) in enumerate(zip(W, problem.dictionaries)):
        rows = m + d.shape[0] if problem.trivial else m
        if np.shape(w) != (rows, n):
            raise SolverError(f"modality {k}: coefficient shape {np.shape(w)} != {(rows, n)}")


def reconstruct(problem: SparseProblem, W: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``B^k W^k`` per modality, without forming ``B^k``."""
    m = problem.n_templates
    out = []
    for d, w in zip(problem.dictionaries, W):
        rec = d @ w[:m]
        if problem.trivial:
            rec = rec + w[m:]
        out.append(rec)
    return out


def objective(problem: SparseProblem, W: Sequence[np.ndarray], epsilon: float = 0.0) -> float:
    """Value of the joint-sparse objective at ``W``.

    With ``epsilon > 0`` every group norm ``r`` is replaced by its Huber
    smoothing, the surrogate that the reweighted solver decreases
    monotonically. ``epsilon = 0`` gives the exact non-smooth objective.
    """
    _check_shapes(problem, W)
    m = problem.n_templates
    W = [np.asarray(w, dtype=float) for w in W]
    value = 0.0
    for rec, x in zip(reconstruct(problem, W), problem.observations):
        r = rec - x
        value += float(np.einsum("ij,ij->", r, r))
    targets = [w[:m] for w in W]
    penalty = float(np.sum(huber(target_row_norms(targets), epsilon)))
    if problem.trivial:
        for w in W:
            e = w[m:]
            penalty += float(np.sum(huber(np.sqrt(np.einsum("ij,ij->i", e, e)), epsilon)))
    value += problem.lambda1 * penalty
    for tt in problem.active_targets():
        norms = _temporal_diff_norms(targets, tt)
        value += problem.lambda2 * problem.alpha ** tt.lag * float(np.sum(huber(norms, epsilon)))
    return value


def reweight(
    W: Sequence[np.ndarray],
    temporal_targets: Sequence[TemporalTarget],
    epsilon: float,
    n_templates: int,
) -> IRLSState:
    """Row-group reweighting diagonals ``1 / (2 max(||row||, epsilon))``.

    ``temporal_targets`` should already be filtered to the active ones.
    """
    if not epsilon > 0:
        raise SolverError("epsilon must be > 0")
    m = n_templates
    targets = [np.asarray(w)[:m] for w in W]
    diag_sparsity = 0.5 / np.maximum(target_row_norms(targets), epsilon)
    diag_trivial = []
    for w in W:
        e = np.asarray(w)[m:]
        if e.shape[0]:
            diag_trivial.append(0.5 / np.maximum(np.sqrt(np.einsum("ij,ij->i", e, e)), epsilon))
        else:
            diag_trivial.append(np.zeros(0))
    if temporal_targets:
        diag_temporal = np.stack(
            [0.5 / np.maximum(_temporal_diff_norms(targets, tt), epsilon) for tt in temporal_targets]
        )
        lags = np.array([tt.lag for tt in temporal_targets])
    else:
        diag_temporal = np.zeros((0, m))
        lags = np.zeros(0, dtype=int)
    return IRLSState(diag_sparsity, diag_trivial, diag_temporal, lags, epsilon)


def closed_form_step(
    problem: SparseProblem,
    state: IRLSState,
    k: int,
    temporal_targets: Optional[Sequence[TemporalTarget]] = None,
) -> np.ndarray:
    """Closed-form minimiser of the reweighted quadratic for modality ``k``.

    The ``(m + d_k)``-square normal system is reduced to its ``m x m`` Schur
    complement over the target rows: the trivial block of ``B^T B`` is the
    identity, so eliminating it only needs a diagonal inverse.
    """
    D = problem.dictionaries[k]
    X = problem.observations[k]
    m = problem.n_templates
    if temporal_targets is None:
        temporal_targets = problem.active_targets()

    diag = problem.lambda1 * state.diag_sparsity
    shift = np.zeros(m)
    if len(temporal_targets):
        decay = problem.lambda2 * problem.alpha ** state.lags.astype(float)
        weighted = decay[:, None] * state.diag_temporal
        diag = diag + weighted.sum(axis=0)
        shift = sum(wt * tt.coefficients[k] for wt, tt in zip(weighted, temporal_targets))

    if problem.trivial:
        b = problem.lambda1 * state.diag_trivial[k]
        g = b / (1.0 + b)
        gD = g[:, None] * D
        S = D.T @ gD + np.diag(diag)
        rhs = gD.T @ X + shift[:, None]
    else:
        S = D.T @ D + np.diag(diag)
        rhs = D.T @ X + shift[:, None]

    z = _spd_solve(S, rhs)
    if not problem.trivial:
        return z
    e = (X - D @ z) / (1.0 + b)[:, None]
    return np.vstack([z, e])


def _spd_solve(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        # only reachable with lambda1 = 0, where the diagonal is no longer positive
        return np.linalg.lstsq(S, rhs, rcond=None)[0]


def _basic_fit(D: np.ndarray, X: np.ndarray, rtol: float) -> np.ndarray:
    """Least-squares fit supported on a column-pivoted basis of ``D``."""
    m = D.shape[1]
    _, R, piv = scipy.linalg.qr(D, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.zeros((m, X.shape[1]))
    rank = int(np.sum(diag > rtol * diag[0]))
    cols = np.sort(piv[:rank])
    z = np.zeros((m, X.shape[1]))
    z[cols] = np.linalg.lstsq(D[:, cols], X, rcond=None)[0]
    return z


def _initial_fit(problem: SparseProblem, config: SolverConfig) -> list[np.ndarray]:
    """Unregularised least-squares start.

    The system is underdetermined with trivial templates (and for
    self-representation), so a particular solution must be picked:
    ``min_norm`` takes the minimum-norm one, ``basic`` one supported on a
    rank-revealing subset of template columns.
    """
    W = []
    for D, X in zip(problem.dictionaries, problem.observations):
        m = D.shape[1]
        if config.init == "basic":
            z = _basic_fit(D, X, config.basic_rtol)
        elif problem.trivial:
            # minimum-norm solution of [D, I] W = X via the push-through identity
            z = _spd_solve(np.eye(m) + D.T @ D, D.T @ X)
        else:
            z = np.linalg.lstsq(D, X, rcond=None)[0]
        W.append(np.vstack([z, X - D @ z]) if problem.trivial else z)
    return W


def solve(problem: SparseProblem, config: Optional[SolverConfig] = None) -> CoefficientSolution:
    """Run the reweighted closed-form iteration to convergence."""
    config = config or SolverConfig()
    m = problem.n_templates
    eps = config.epsilon
    active = problem.active_targets()

    W = _initial_fit(problem, config)
    obj = objective(problem, W, eps)
    initial = obj
    trace: list[float] = []
    converged = False
    if problem.lambda1 == 0 and not active:
        # the least-squares start is already optimal
        return CoefficientSolution(W, [obj], initial, 1, True)

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for _ in range(config.max_iters):
            state = reweight(W, active, eps, m)
            ks = range(problem.n_modalities)
            if pool is not None:
                W = list(pool.map(lambda k: closed_form_step(problem, state, k, active), ks))
            else:
                W = [closed_form_step(problem, state, k, active) for k in ks]
            new = objective(problem, W, eps)
            trace.append(new)
            change = abs(obj - new) / max(obj, 1e-12)
            obj = new
            if change < config.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if not all(np.all(np.isfinite(w)) for w in W):
        raise SolverError("solver produced non-finite coefficients")
    log.debug("solve: %d iterations, objective %.6g", len(trace), obj)
    return CoefficientSolution(W, trace, initial, len(trace), converged)


def solve_self_representation(
    Y: np.ndarray, lambda3: float, config: Optional[SolverConfig] = None
) -> np.ndarray:
    """Row-sparse self-expression ``min ||Y - YU||_F^2 + lambda3 ||U||_{2,1}``.

    Uses the pivoted ``basic`` start so that exactly repeated columns are
    represented by a single row of ``U``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise SolverError("Y must be a 2-D matrix with at least one column")
    if config is None:
        config = SolverConfig(init="basic")
    problem = SparseProblem([Y], [Y], lambda1=lambda3, lambda2=0.0, trivial=False)
    return solve(problem, config).coefficients[0]
