"""Density evolution for coupled ensembles over position-dependent BECs.

State arrays are indexed like ``layout(p).vn_positions``: for the two-sided
chain that is positions ``-w+2 .. L+w-1`` (the known VNs included and held
at zero), for the circular chain positions ``1 .. L``.  The batched kernel
advances many independent profiles at once, which is what the threshold
scan and the mapper search spend their time in.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .channel import ChannelFamily, ChannelSet
from .ensemble import EnsembleParams, layout
from .errors import ParameterError
from .mapper import input_eps

log = logging.getLogger(__name__)

SEARCH_MODES = ("linear_scan", "bisection")


@dataclass(frozen=True)
class ThresholdConfig:
    """Precision and stopping rule of a threshold computation."""

    delta: float = 1e-4
    p_tar: float = 1e-6
    l_max: int = 5000
    search: str = "linear_scan"
    chunk: int = 256

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if not 0 < self.p_tar < 1:
            raise ParameterError(f"p_tar must lie in (0, 1), got {self.p_tar}")
        if self.l_max < 1:
            raise ParameterError(f"l_max must be >= 1, got {self.l_max}")
        if self.search not in SEARCH_MODES:
            raise ParameterError(f"search must be one of {SEARCH_MODES}, got {self.search!r}")

    def grid(self) -> np.ndarray:
        """Candidate values ``delta, 2 delta, ...`` not exceeding one."""
        n = int(np.floor(1.0 / self.delta + 1e-9))
        return np.round(np.arange(1, n + 1) * self.delta, 12)


@dataclass
class DecodingState:
    p: np.ndarray
    input_eps: np.ndarray
    l: int = 0


@dataclass
class DecodeOutcome:
    success: bool
    iterations: int | None
    residual: float
    trajectory: np.ndarray | None = None


def _full_input(p: EnsembleParams, data_eps: np.ndarray) -> np.ndarray:
    """Embed ``(..., L)`` data-position erasures into the state layout."""
    if not p.circular and p.w > 1:
        pad = [(0, 0)] * (data_eps.ndim - 1) + [(p.w - 1, p.w - 1)]
        return np.pad(data_eps, pad)
    return np.array(data_eps, dtype=float)


def _window_mean(x: np.ndarray, w: int) -> np.ndarray:
    # mean over w consecutive entries along the last axis; output length n - w + 1
    n = x.shape[-1] - w + 1
    acc = x[..., 0:n].copy()
    for t in range(1, w):
        acc += x[..., t : t + n]
    return acc / w


def _update(P: np.ndarray, data_eps: np.ndarray, p: EnsembleParams) -> np.ndarray:
    """One DE iteration; returns the new erasures at data positions 1..L.

    CN position c averages VN positions c-w+1..c, VN position j averages
    CN positions j..j+w-1.  Two-sided states already hold the zero known
    VNs on both sides; circular states are wrapped here.
    """
    w = p.w
    if p.circular and w > 1:
        P = np.concatenate([P[..., p.L - w + 1 :], P], axis=-1)
    x_cn = _window_mean(P, w)
    q = 1.0 - (1.0 - x_cn) ** (p.dc - 1)
    if p.circular and w > 1:
        q = np.concatenate([q, q[..., : w - 1]], axis=-1)
    return data_eps * _window_mean(q, w) ** (p.dv - 1)


def de_step(s: DecodingState, p: EnsembleParams) -> DecodingState:
    """Advance a single profile by one iteration."""
    lay = layout(p)
    if s.p.shape[-1] != len(lay.vn_positions) or s.input_eps.shape != s.p.shape:
        raise ParameterError("state does not match the ensemble layout")
    ds = lay.data_slice
    new = np.zeros_like(s.p)
    new[..., ds] = _update(s.p, s.input_eps[..., ds], p)
    return DecodingState(new, s.input_eps, s.l + 1)


def initial_state(data_eps, p: EnsembleParams) -> DecodingState:
    data_eps = np.asarray(data_eps, dtype=float)
    if data_eps.shape[-1] != p.L:
        raise ParameterError(f"expected {p.L} input erasures, got {data_eps.shape[-1]}")
    full = _full_input(p, data_eps)
    return DecodingState(full.copy(), full, 0)


@njit(cache=True)
def _decode_rows(data_eps, dv, dc, w, circular, p_tar, limits, success, iters, residual):
    B, L = data_eps.shape
    off = 0 if circular else w - 1
    n = L + 2 * off
    P = np.zeros(n)
    q = np.zeros(L + w - 1)
    for r in range(B):
        P[:] = 0.0
        for j in range(L):
            P[off + j] = data_eps[r, j]
        lim = limits[r]
        l = 0
        while True:
            res = 0.0
            for j in range(L):
                res += P[off + j]
            res /= L
            if res < p_tar:
                success[r] = True
                iters[r] = l
                residual[r] = res
                break
            if l >= lim:
                residual[r] = res
                break
            # CN at 0-based position c averages VN positions c-w+1..c
            ncn = L if circular else L + w - 1
            for c in range(ncn):
                acc = 0.0
                for t in range(w):
                    if circular:
                        acc += P[(c - w + 1 + t) % L]
                    else:
                        acc += P[c + t]
                q[c] = 1.0 - (1.0 - acc / w) ** (dc - 1)
            # VN j averages CN positions j..j+w-1
            for j in range(L):
                acc = 0.0
                for t in range(w):
                    if circular:
                        acc += q[(j + t) % L]
                    else:
                        acc += q[j + t]
                P[off + j] = data_eps[r, j] * (acc / w) ** (dv - 1)
            l += 1


def run_batch(
    data_eps: np.ndarray,
    p: EnsembleParams,
    p_tar: float,
    l_max: int,
    budget: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode a ``(B, L)`` stack of input-erasure profiles independently.

    Returns ``(success, iterations, residual)``; ``iterations`` is -1 where
    decoding failed and ``residual`` is the final average erasure over the
    data positions.  ``budget`` optionally caps the iterations of each row
    below ``l_max``.
    """
    data_eps = np.ascontiguousarray(np.atleast_2d(np.asarray(data_eps, dtype=float)))
    B, L = data_eps.shape
    if L != p.L:
        raise ParameterError(f"expected {p.L} positions, got {L}")
    limits = np.full(B, int(l_max), dtype=np.int64)
    if budget is not None:
        limits = np.minimum(limits, np.asarray(budget, dtype=np.int64))
    success = np.zeros(B, dtype=np.bool_)
    iters = np.full(B, -1, dtype=np.int64)
    residual = np.zeros(B)
    _decode_rows(data_eps, p.dv, p.dc, p.w, p.circular, float(p_tar), limits, success, iters, residual)
    return success, iters, residual


def run_batch_numpy(
    data_eps: np.ndarray,
    p: EnsembleParams,
    p_tar: float,
    l_max: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-at-a-time equivalent of :func:`run_batch` built on :func:`_update`."""
    data_eps = np.atleast_2d(np.asarray(data_eps, dtype=float))
    B, L = data_eps.shape
    ds = layout(p).data_slice
    success = np.zeros(B, dtype=bool)
    iters = np.full(B, -1, dtype=int)
    residual = np.empty(B)
    rows = np.arange(B)
    P = _full_input(p, data_eps)
    e = data_eps
    for l in range(l_max + 1):
        res = P[:, ds].mean(axis=1)
        done = res < p_tar
        if done.any():
            success[rows[done]] = True
            iters[rows[done]] = l
            residual[rows[done]] = res[done]
            keep = ~done
            rows, P, e, res = rows[keep], P[keep], e[keep], res[keep]
        if rows.size == 0:
            break
        if l == l_max:
            residual[rows] = res
            break
        P[:, ds] = _update(P, e, p)
    return success, iters, residual


def run_de(
    A,
    cs: ChannelSet,
    p: EnsembleParams,
    cfg: ThresholdConfig = ThresholdConfig(),
    record_trajectory: bool = False,
) -> DecodeOutcome:
    """Decode from ``p^(0) = eps^j`` until the data-position average drops below ``p_tar``."""
    data_eps = input_eps(A, cs)
    if not record_trajectory:
        ok, it, res = run_batch(data_eps[None, :], p, cfg.p_tar, cfg.l_max)
        return DecodeOutcome(bool(ok[0]), int(it[0]) if ok[0] else None, float(res[0]))

    s = initial_state(data_eps, p)
    ds = layout(p).data_slice
    traj = [s.p.copy()]
    res = float(s.p[ds].mean())
    while res >= cfg.p_tar and s.l < cfg.l_max:
        s = de_step(s, p)
        traj.append(s.p.copy())
        res = float(s.p[ds].mean())
    ok = res < cfg.p_tar
    return DecodeOutcome(ok, s.l if ok else None, res, np.array(traj))


@dataclass
class ThresholdResult:
    eps_bar_star: float
    below_grid: bool = False
    evaluations: int = 0
    search: str = "linear_scan"

    def __float__(self) -> float:
        return self.eps_bar_star


FamilyLike = ChannelFamily | Callable[[float], ChannelSet]


def _eps_rows(family: FamilyLike, values: np.ndarray) -> np.ndarray:
    if isinstance(family, ChannelFamily):
        return family.eps_matrix(values)
    return np.array([np.asarray(family(float(v)).eps) for v in values])


def decodes(A, family: FamilyLike, p: EnsembleParams, values, cfg: ThresholdConfig) -> np.ndarray:
    """Success flags for each average erasure in ``values`` under mapper ``A``."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    data_eps = input_eps(A, _eps_rows(family, values))
    ok, _, _ = run_batch(data_eps, p, cfg.p_tar, cfg.l_max)
    return ok


def threshold(
    A,
    family: FamilyLike,
    p: EnsembleParams,
    cfg: ThresholdConfig = ThresholdConfig(),
) -> ThresholdResult:
    """Largest grid value ``k * delta`` that still decodes.

    ``linear_scan`` steps upward from ``delta`` and stops at the first
    failure; grid points are decoded a chunk at a time, which only affects
    speed.  ``bisection`` searches the same grid and assumes success is
    monotone in ``eps_bar``.
    """
    grid = cfg.grid()
    if cfg.search == "bisection":
        return _threshold_bisection(A, family, p, cfg, grid)

    evals = 0
    size = max(1, cfg.chunk)
    for start in range(0, grid.size, size):
        vals = grid[start : start + size]
        ok = decodes(A, family, p, vals, cfg)
        evals += vals.size
        if not ok.all():
            first = start + int(np.argmin(ok))
            if first == 0:
                return ThresholdResult(0.0, True, evals, cfg.search)
            return ThresholdResult(float(grid[first - 1]), False, evals, cfg.search)
    return ThresholdResult(float(grid[-1]), False, evals, cfg.search)


def _threshold_bisection(A, family, p, cfg, grid) -> ThresholdResult:
    ok = decodes(A, family, p, grid[[0, -1]], cfg)
    evals = 2
    if not ok[0]:
        return ThresholdResult(0.0, True, evals, "bisection")
    if ok[1]:
        return ThresholdResult(float(grid[-1]), False, evals, "bisection")
    lo, hi = 0, grid.size - 1  # grid[lo] decodes, grid[hi] does not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        evals += 1
        if decodes(A, family, p, grid[[mid]], cfg)[0]:
            lo = mid
        else:
            hi = mid
    return ThresholdResult(float(grid[lo]), False, evals, "bisection")
