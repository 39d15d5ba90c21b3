"""Mapper search: differential evolution on the iteration count, wrapped in
threshold-raising outer iterations, plus the lift of a two-channel mapper
to more channels.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ChannelSet
from .density import FamilyLike, ThresholdConfig, _eps_rows, run_batch, threshold
from .ensemble import EnsembleParams
from .errors import ParameterError
from .mapper import TOL, uniform, validate

log = logging.getLogger(__name__)

FAIL_PENALTY = 1e6


@dataclass(frozen=True)
class OptRunConfig:
    """Knobs of :func:`iterative_threshold_opt`.

    ``population=None`` means four times the genome length.  ``inner`` is
    used to score candidates, ``outer`` for the threshold computations.
    """

    population: int | None = None
    generations: int = 300
    F: float = 0.7
    CR: float = 0.1
    seed: int = 0
    restarts: int = 3
    init_spread: float = 0.1
    repair_sweeps: int = 100
    inner: ThresholdConfig = ThresholdConfig()
    outer: ThresholdConfig = ThresholdConfig()
    max_outer: int = 50
    fail_penalty: float = FAIL_PENALTY

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ParameterError("population must be >= 4")
        if not 0 < self.F <= 2:
            raise ParameterError(f"F must lie in (0, 2], got {self.F}")
        if not 0 <= self.CR <= 1:
            raise ParameterError(f"CR must lie in [0, 1], got {self.CR}")
        if self.generations < 0 or self.restarts < 1 or self.max_outer < 1:
            raise ParameterError("generations >= 0, restarts >= 1 and max_outer >= 1 required")

    def pop_size(self, genome_len: int) -> int:
        return self.population if self.population is not None else max(4, 4 * genome_len)

    def snapshot(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# constraint repair and genome coding


def project_capped_simplex(X: np.ndarray, total: float, iters: int = 100) -> np.ndarray:
    """Euclidean projection of each row of ``X`` onto ``{x in [0,1]^n : sum x = total}``.

    Solves ``sum clip(x - tau, 0, 1) = total`` for the shift ``tau`` by
    bisection, vectorized over rows.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[-1]
    if not 0 <= total <= n:
        raise ParameterError(f"row total {total} infeasible for {n} entries in [0, 1]")
    lo = (X.min(axis=-1) - 1.0)[:, None]  # every entry clips to 1
    hi = X.max(axis=-1)[:, None]  # every entry clips to 0
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        s = np.clip(X - tau, 0.0, 1.0).sum(axis=-1, keepdims=True)
        lo = np.where(s > total, tau, lo)
        hi = np.where(s > total, hi, tau)
        if np.all(hi - lo < 1e-15):
            break
    Y = np.clip(X - 0.5 * (lo + hi), 0.0, 1.0)
    # remove the bisection leftover on entries strictly inside the box
    resid = total - Y.sum(axis=-1, keepdims=True)
    inner = (Y > 0) & (Y < 1)
    cnt = np.maximum(inner.sum(axis=-1, keepdims=True), 1)
    return np.clip(Y + np.where(inner, resid / cnt, 0.0), 0.0, 1.0)


def project_simplex_columns(A: np.ndarray) -> np.ndarray:
    """Project each column of ``(..., m, L)`` onto the probability simplex."""
    X = np.moveaxis(np.asarray(A, dtype=float), -2, -1)  # (..., L, m)
    m = X.shape[-1]
    u = -np.sort(-X, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, m + 1)
    cond = u - css / k > 0
    rho = m - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    return np.moveaxis(np.maximum(X - theta, 0.0), -1, -2)


def repair(A: np.ndarray, sweeps: int = 100, tol: float = TOL) -> tuple[np.ndarray, np.ndarray]:
    """Pull a stack of ``(B, m, L)`` matrices into the valid set.

    Alternates exact projections onto the row-sum sets and the column
    simplices.  Two channels need a single row projection.  Returns the
    repaired stack and a flag per matrix that both residuals are below
    ``tol``.
    """
    A = np.clip(np.array(A, dtype=float), 0.0, 1.0)
    B, m, L = A.shape
    target = L / m
    if m == 1:
        return np.ones_like(A), np.ones(B, dtype=bool)
    if m == 2:
        top = project_capped_simplex(A[:, 0, :], target)
        out = np.stack([top, 1.0 - top], axis=1)
        return out, _residuals(out) < tol
    for _ in range(sweeps):
        A = project_capped_simplex(A.reshape(B * m, L), target).reshape(B, m, L)
        A = project_simplex_columns(A)
        ok = _residuals(A) < tol
        if ok.all():
            break
    return A, _residuals(A) < tol


def _residuals(A: np.ndarray) -> np.ndarray:
    m, L = A.shape[-2:]
    col = np.abs(A.sum(axis=-2) - 1.0).max(axis=-1)
    row = np.abs(A.sum(axis=-1) - L / m).max(axis=-1)
    box = np.maximum(-A, A - 1.0).max(axis=(-2, -1))
    return np.maximum(np.maximum(col, row), np.maximum(box, 0.0))


def encode(A) -> np.ndarray:
    """Genome of a mapper: its first ``m - 1`` rows, flattened."""
    A = np.asarray(A, dtype=float)
    return A[:-1].ravel().copy()


def decode(genome, m: int, L: int, sweeps: int = 100) -> np.ndarray:
    """Mapper from a genome; the last row follows from the column sums.

    Raises :class:`ParameterError` if the repair does not converge.
    """
    A, ok = decode_batch(np.asarray(genome, dtype=float)[None, :], m, L, sweeps)
    if not ok[0]:
        raise ParameterError("genome could not be repaired into a valid mapper")
    return A[0]


def decode_batch(G: np.ndarray, m: int, L: int, sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    G = np.clip(np.atleast_2d(G), 0.0, 1.0)
    B = G.shape[0]
    if m == 1:
        return np.ones((B, 1, L)), np.ones(B, dtype=bool)
    top = G.reshape(B, m - 1, L)
    last = np.clip(1.0 - top.sum(axis=1, keepdims=True), 0.0, 1.0)
    return repair(np.concatenate([top, last], axis=1), sweeps)


# ----------------------------------------------------------------------------
# objective


def objective_batch(As: np.ndarray, cs: ChannelSet, p: EnsembleParams, cfg: ThresholdConfig,
                    fail_penalty: float = FAIL_PENALTY, bound=None) -> np.ndarray:
    """Iterations to success for each mapper in ``(B, m, L)``.

    A mapper that does not decode within ``cfg.l_max`` scores
    ``l_max + fail_penalty * residual``.  With ``bound`` (one value per
    mapper) decoding stops once a mapper provably scores above its bound,
    and such mappers get ``inf``; bounds above ``l_max`` do not cut.
    """
    eps = np.asarray(cs.eps, dtype=float)
    data_eps = np.einsum("i,bij->bj", eps, As)
    budget = None
    if bound is not None:
        bound = np.asarray(bound, dtype=float)
        budget = np.where(bound < cfg.l_max, np.floor(bound), cfg.l_max).astype(np.int64)
    ok, it, res = run_batch(data_eps, p, cfg.p_tar, cfg.l_max, budget)
    cost = np.where(ok, it, cfg.l_max + fail_penalty * res).astype(float)
    if budget is not None:
        cost[~ok & (budget < cfg.l_max)] = np.inf
    return cost


def objective(A, cs: ChannelSet, p: EnsembleParams, cfg: ThresholdConfig,
              fail_penalty: float = FAIL_PENALTY) -> float:
    return float(objective_batch(np.asarray(A, dtype=float)[None], cs, p, cfg, fail_penalty)[0])


# ----------------------------------------------------------------------------
# differential evolution


@dataclass
class SearchResult:
    best: np.ndarray
    cost: float
    evaluations: int
    history: list[float] = field(default_factory=list)


def differential_evolution(
    cost_batch,
    dim: int,
    rng: np.random.Generator,
    population: int,
    generations: int,
    F: float = 0.7,
    CR: float = 0.9,
    init: np.ndarray | None = None,
    fix=None,
    spread: float = 0.0,
) -> tuple[np.ndarray, float, list[float], int]:
    """DE/rand/1/bin minimizer over ``[0, 1]^dim``.

    ``cost_batch(X, bound)`` scores a ``(B, dim)`` array of vectors; it may
    return ``inf`` for any row whose cost exceeds ``bound`` (the cost of the
    target the row competes with) since such trials lose selection anyway.  ``fix`` maps a
    batch of raw vectors to ``(repaired vectors, accepted flags)``; rejected
    trials leave their target in place.  ``init`` rows are placed first in
    the initial population.  With ``spread > 0`` the remaining members are
    Gaussian perturbations of the ``init`` rows, each with its own scale
    drawn log-uniformly from ``[spread / 100, spread]``; otherwise they are drawn uniformly.
    Returns ``(best, best_cost, best_cost_per_generation, evaluations)``.
    """
    if population < 4:
        raise ParameterError("population must be >= 4")
    fix = fix or (lambda X: (np.clip(X, 0.0, 1.0), np.ones(len(X), dtype=bool)))
    if getattr(cost_batch, "__code__", None) is not None and cost_batch.__code__.co_argcount == 1:
        plain = cost_batch
        cost_batch = lambda X, bound: plain(X)  # noqa: E731

    n_seed = 0 if init is None else min(len(init), population)

    def draw(k):
        if spread > 0 and n_seed:
            base = init[rng.integers(0, n_seed, k)]
            scale = spread * 10.0 ** (-2.0 * rng.random((k, 1)))
            return base + scale * rng.standard_normal((k, dim))
        return rng.random((k, dim))

    X = draw(population)
    if n_seed:
        X[:n_seed] = init[:n_seed]
    X_fixed, ok = fix(X)
    # resample members the repair gave up on
    for _ in range(100):
        bad = ~ok
        bad[:n_seed] = False
        if not bad.any():
            break
        Xb, okb = fix(draw(int(bad.sum())))
        X_fixed[bad], ok[bad] = Xb, okb
    X = X_fixed
    cost = cost_batch(X, None)
    evals = population
    hist = [float(cost.min())]

    idx = np.arange(population)
    for _ in range(generations):
        # all random draws of a generation happen before any evaluation
        r = np.empty((population, 3), dtype=int)
        for i in idx:
            r[i] = rng.choice(np.delete(idx, i), 3, replace=False)
        mutant = X[r[:, 0]] + F * (X[r[:, 1]] - X[r[:, 2]])
        cross = rng.random((population, dim)) < CR
        cross[idx, rng.integers(0, dim, population)] = True
        trial, ok = fix(np.where(cross, mutant, X))
        trial_cost = np.full(population, np.inf)
        if ok.any():
            trial_cost[ok] = cost_batch(trial[ok], cost[ok])
            evals += int(ok.sum())
        better = trial_cost <= cost
        X[better] = trial[better]
        cost[better] = trial_cost[better]
        hist.append(float(cost.min()))
    b = int(np.argmin(cost))
    return X[b].copy(), float(cost[b]), hist, evals


def de_search(
    cs: ChannelSet,
    p: EnsembleParams,
    cfg: OptRunConfig,
    rng: np.random.Generator | None = None,
    seeds: list | None = None,
) -> SearchResult:
    """Mapper minimizing the iteration count at the fixed channel set ``cs``.

    The uniform mapper and any matrices in ``seeds`` join every initial
    population, so the result never scores worse than them.
    """
    m, L = cs.m, p.L
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    starts = [uniform(m, L)] + [np.asarray(s, dtype=float) for s in (seeds or [])]
    if m == 1:
        A = uniform(1, L)
        c = objective(A, cs, p, cfg.inner, cfg.fail_penalty)
        return SearchResult(A, c, 1, [c])

    dim = (m - 1) * L
    init = np.array([encode(s) for s in starts])

    def fix(G):
        A, ok = decode_batch(G, m, L, cfg.repair_sweeps)
        return A[:, :-1, :].reshape(len(G), dim), ok

    def cost(G, bound):
        A, _ = decode_batch(G, m, L, cfg.repair_sweeps)
        return objective_batch(A, cs, p, cfg.inner, cfg.fail_penalty, bound)

    best = None
    evals = 0
    for child in rng.spawn(cfg.restarts):
        g, c, hist, n = differential_evolution(
            cost, dim, child, cfg.pop_size(dim), cfg.generations, cfg.F, cfg.CR, init, fix,
            cfg.init_spread,
        )
        evals += n
        log.debug("restart finished: cost %.6g after %d evaluations", c, n)
        if best is None or c < best[1]:
            best = (g, c, hist)
    A = decode(best[0], m, L, cfg.repair_sweeps)
    return SearchResult(A, best[1], evals, best[2])


# ----------------------------------------------------------------------------
# outer loop


@dataclass
class OuterStep:
    eps_bar: float
    best_cost: float
    threshold: float


@dataclass
class OptResult:
    best: np.ndarray
    threshold: float
    uniform_threshold: float
    history: list[OuterStep]
    seed: int
    config: dict
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "uniform_threshold": self.uniform_threshold,
            "history": [asdict(h) for h in self.history],
            "seed": self.seed,
            "config": self.config,
            "wall_time": self.wall_time,
        }


def iterative_threshold_opt(
    p: EnsembleParams,
    family: FamilyLike,
    cfg: OptRunConfig = OptRunConfig(),
    m: int | None = None,
    start=None,
) -> OptResult:
    """Raise the threshold by repeatedly minimizing iterations at the current one.

    Starts at the uniform mapper's threshold, finds the mapper decoding
    fastest there, recomputes its threshold, and repeats while the
    threshold strictly improves.  Each search is warm-started with the best
    mapper found so far.  A valid ``start`` mapper (e.g. an earlier result)
    replaces uniform as the first incumbent if its threshold is higher.
    """
    t0 = time.perf_counter()
    m = m if m is not None else family.m
    rng = np.random.default_rng(cfg.seed)
    best_A = uniform(m, p.L)
    uni = threshold(best_A, family, p, cfg.outer).eps_bar_star
    best_thr = uni
    if start is not None:
        start = np.asarray(start, dtype=float)
        rep = validate(start)
        if start.shape != best_A.shape or not rep.ok:
            raise ParameterError(f"start mapper must be a valid {m}x{p.L} mapper: {rep}")
        t_start = threshold(start, family, p, cfg.outer).eps_bar_star
        if t_start > best_thr:
            best_A, best_thr = start, t_start
    history: list[OuterStep] = []
    log.info("uniform threshold %.4f", uni)
    for _ in range(cfg.max_outer):
        if best_thr <= 0.0:
            break
        cs = ChannelSet(_eps_rows(family, [best_thr])[0], best_thr, getattr(family, "name", "family"))
        found = de_search(cs, p, cfg, rng, seeds=[best_A])
        thr = threshold(found.best, family, p, cfg.outer).eps_bar_star
        history.append(OuterStep(best_thr, found.cost, thr))
        log.info("eps_bar %.4f: best cost %.6g, new threshold %.4f", best_thr, found.cost, thr)
        if thr <= best_thr:
            break
        best_A, best_thr = found.best, thr
    return OptResult(best_A, best_thr, uni, history, cfg.seed, cfg.snapshot(),
                     time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# lift to more channels


@dataclass
class LiftResult:
    feasible: bool
    A: np.ndarray | None
    max_residual: float
    worst_position: int | None
    iterations: int

    def as_dict(self) -> dict:
        return {"feasible": self.feasible, "max_residual": self.max_residual,
                "worst_position": self.worst_position, "iterations": self.iterations}


def lift_assignment(
    target_eps,
    cs: ChannelSet,
    max_iter: int = 200_000,
    match_tol: float = 1e-6,
    tol: float = TOL,
    start=None,
) -> LiftResult:
    """Find a valid ``m x L`` mapper with ``cs.eps @ A == target_eps``.

    Alternating projection between the affine set (column sums, row sums,
    per-position erasure match) and the unit box.  ``target_eps`` is
    normally ``input_eps(A2, cs2)`` of an optimized two-channel mapper.
    """
    t = np.asarray(target_eps, dtype=float)
    eps = np.asarray(cs.eps, dtype=float)
    m, L = eps.size, t.size
    out_of_hull = np.maximum(eps.min() - t, t - eps.max())
    if np.any(out_of_hull > match_tol):
        j = int(np.argmax(out_of_hull))
        return LiftResult(False, None, float(out_of_hull[j]), j + 1, 0)

    # unknown x = A.ravel() (row-major); rows of E: row sums, column sums, eps match
    E = np.zeros((m + 2 * L, m * L))
    for i in range(m):
        E[i, i * L : (i + 1) * L] = 1.0
    for j in range(L):
        E[m + j, j::L] = 1.0
        E[m + L + j, j::L] = eps
    f = np.concatenate([np.full(m, L / m), np.ones(L), t])
    E_pinv = np.linalg.pinv(E)

    x = (np.asarray(start, dtype=float) if start is not None else uniform(m, L)).ravel()
    x = np.clip(x, 0.0, 1.0)
    k = 0
    for k in range(1, max_iter + 1):
        r = E @ x - f
        if np.abs(r[: m + L]).max() < tol and np.abs(r[m + L :]).max() < min(match_tol, tol):
            break
        x = np.clip(x - E_pinv @ r, 0.0, 1.0)
    A = x.reshape(m, L)
    match = np.abs(eps @ A - t)
    j = int(np.argmax(match))
    feasible = bool(validate(A, tol=tol).ok and match[j] <= match_tol)
    return LiftResult(feasible, A if feasible else None, float(max(match[j], _residuals(A[None])[0])),
                      j + 1, k)
