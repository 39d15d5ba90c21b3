"""PAM/BRGC bit channels and their binary erasure surrogates.

Each bit channel ``B_i -> Y`` of a real AWGN channel ``Y = X + N`` with
``N ~ N(0, 1)`` is replaced by a BEC whose erasure probability equals
``1 - I(B_i; Y)``.  The family of such BEC vectors is indexed by the
average erasure probability ``eps_bar`` instead of the SNR.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BracketError, NumericError, ParameterError

SUPPORTED_M = (1, 2, 3)
DEFAULT_NODES = 128
DEFAULT_BRACKET_DB = (-80.0, 40.0)
DEFAULT_TOL = 1e-10
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class Constellation:
    """Unit-energy PAM points with one bit label per point.

    ``points`` is scaled by ``sqrt(snr)`` when an SNR is applied, so the SNR
    is the average symbol energy at unit noise variance.
    """

    points: np.ndarray
    labels: tuple[str, ...]

    @property
    def m(self) -> int:
        return len(self.labels[0])

    def bit_matrix(self) -> np.ndarray:
        """(2^m, m) array of label bits, bit 1 leftmost."""
        return np.array([[int(c) for c in lab] for lab in self.labels], dtype=int)

    def reflected(self) -> Constellation:
        return Constellation(-self.points[::-1].copy(), tuple(reversed(self.labels)))


def gray_sequence(m: int) -> list[str]:
    """Binary reflected Gray code of length ``2**m``."""
    if m == 0:
        return [""]
    prev = gray_sequence(m - 1)
    return ["0" + s for s in prev] + ["1" + s for s in reversed(prev)]


def build_pam_brgc(m: int) -> Constellation:
    """Equally spaced 2^m-PAM, unit average energy, BRGC labels left to right."""
    if m not in SUPPORTED_M:
        raise ParameterError(f"unsupported bits per symbol m={m}; expected one of {SUPPORTED_M}")
    M = 2**m
    pts = np.arange(-(M - 1), M, 2, dtype=float)
    pts /= np.sqrt(np.mean(pts**2))
    return Constellation(pts, tuple(gray_sequence(m)))


@lru_cache(maxsize=8)
def _gh_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, wts = np.polynomial.hermite.hermgauss(n)
    # E[f(N)] for N ~ N(0,1) = sum_k wts_k/sqrt(pi) f(sqrt(2) t_k)
    return np.sqrt(2.0) * t, wts / np.sqrt(np.pi)


def bit_channel_qualities(c: Constellation, snr, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Quality ``1 - I(B_i; Y)`` for every bit and every SNR in ``snr``.

    Returns an array of shape ``snr.shape + (m,)``.  Bits are equiprobable,
    the integral over the noise is Gauss-Hermite with ``nodes`` points.
    """
    snr = np.asarray(snr, dtype=float)
    if np.any(snr <= 0):
        raise ParameterError("snr must be positive")
    n, wn = _gh_nodes(nodes)
    amp = np.sqrt(snr)[..., None] * c.points  # (..., M)
    # y = x_s + n for transmitted point s and node k: (..., M, K)
    y = amp[..., :, None] + n
    # exponent -(y - x')^2 / 2 for every candidate point x': (..., M, K, M)
    d = -0.5 * (y[..., None] - amp[..., None, None, :]) ** 2
    # shift by the max; the transmitted point keeps every sum above exp(-n^2/2)
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    bits = c.bit_matrix().astype(float)
    M = bits.shape[0]
    s_all = e.sum(axis=-1)[..., None]
    s_one = e @ bits
    s_zero = e @ (1.0 - bits)
    # sum over points sharing the transmitted point's value of bit i
    s_same = np.where(bits[:, None, :] > 0, s_one, s_zero)
    # 1 - I(B_i; Y) = E[log2(sum_all / sum_same)]
    integrand = np.log2(s_all / s_same)
    out = np.einsum("...ski,k->...i", integrand, wn) / M
    lo, hi = out.min(initial=0.0), out.max(initial=1.0)
    if lo < -CLAMP_TOL or hi > 1.0 + CLAMP_TOL:
        raise NumericError(f"bit channel quality left [0, 1] beyond tolerance: [{lo}, {hi}]")
    return np.clip(out, 0.0, 1.0)


def bit_channel_quality(c: Constellation, snr: float, i: int, nodes: int = DEFAULT_NODES) -> float:
    """``alpha_i = 1 - I(B_i; Y)`` for bit index ``i`` in ``1..m``."""
    if not 1 <= i <= c.m:
        raise ParameterError(f"bit index {i} outside 1..{c.m}")
    return float(bit_channel_qualities(c, snr, nodes)[i - 1])


@dataclass(frozen=True)
class ChannelSet:
    """Parallel BECs with erasure probabilities ``eps``."""

    eps: np.ndarray
    eps_bar: float
    source: str = "direct"
    snr_db: float | None = None

    @property
    def m(self) -> int:
        return len(self.eps)


def direct_channel_set(eps) -> ChannelSet:
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if eps.ndim != 1 or eps.size == 0:
        raise ParameterError("erasure vector must be a non-empty 1-d sequence")
    if np.any((eps < 0) | (eps > 1)) or not np.all(np.isfinite(eps)):
        raise ParameterError(f"erasure probabilities must lie in [0, 1], got {eps}")
    return ChannelSet(eps, float(np.mean(eps)), "direct")


@lru_cache(maxsize=32)
def _snr_table(points: tuple, labels: tuple, nodes: int, bracket_db: tuple, step_db: float):
    lo_db, hi_db = bracket_db
    grid = np.linspace(lo_db, hi_db, max(2, int(np.ceil((hi_db - lo_db) / step_db)) + 1))
    table = bit_channel_qualities(Constellation(np.array(points), labels), 10 ** (grid / 10), nodes).mean(axis=-1)
    if np.any(np.diff(table) > CLAMP_TOL):
        raise NumericError("mean bit-channel quality is not monotone in SNR")
    grid.flags.writeable = False
    table.flags.writeable = False
    return grid, table


def solve_snr(
    c: Constellation,
    eps_bars,
    nodes: int = DEFAULT_NODES,
    bracket_db: tuple[float, float] = DEFAULT_BRACKET_DB,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
    table_step_db: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Find the SNR (in dB) with ``mean_i alpha_i(snr) = eps_bar`` for each target.

    The mean quality is decreasing in SNR.  A coarse table over
    ``bracket_db`` gives each target a tight bracket, which is then shrunk
    with Illinois steps (regula falsi, bisection fallback) until the mean
    erasure is within ``tol``.  Targets must lie strictly inside the range
    achievable on the bracket.  Returns ``(snr_db, eps)`` with ``eps`` of
    shape ``(len(eps_bars), m)``.
    """
    t = np.atleast_1d(np.asarray(eps_bars, dtype=float))
    grid, table = _snr_table(tuple(c.points), c.labels, nodes, tuple(bracket_db), table_step_db)
    bad = (t >= table[0]) | (t <= table[-1])
    if np.any(bad):
        raise BracketError(
            f"eps_bar {t[bad][0]} outside achievable range ({table[-1]:.3g}, {table[0]:.3g}) "
            f"for SNR bracket {bracket_db} dB"
        )
    # g(x) = mean_alpha(x) - t is decreasing; bracket a < b with g(a) > 0 > g(b)
    k = np.searchsorted(-table, -t)  # first grid index with table <= t
    a, b = grid[k - 1], grid[k]
    ga, gb = table[k - 1] - t, table[k] - t
    x = b.copy()
    eps = bit_channel_qualities(c, 10 ** (x / 10), nodes)
    g = gb.copy()
    side = np.zeros(t.shape, dtype=int)
    for _ in range(max_iter):
        if np.all(np.abs(g) <= tol):
            break
        x = np.where(ga != gb, (a * gb - b * ga) / (gb - ga), 0.5 * (a + b))
        x = np.clip(x, np.minimum(a, b), np.maximum(a, b))
        eps = bit_channel_qualities(c, 10 ** (x / 10), nodes)
        g = eps.mean(axis=-1) - t
        pos = g > 0
        # Illinois: halve the stale endpoint if the same side moves twice
        ga = np.where(pos, g, np.where(side == -1, 0.5 * ga, ga))
        gb = np.where(pos, np.where(side == 1, 0.5 * gb, gb), g)
        a = np.where(pos, x, a)
        b = np.where(pos, b, x)
        side = np.where(pos, 1, -1)
    if np.any(np.abs(g) > tol):
        raise NumericError("SNR root search did not reach the requested tolerance")
    return x, eps


def channel_set_from_eps_bar(c: Constellation, eps_bar: float, **kw) -> ChannelSet:
    """Channel set of a constellation at the SNR giving average erasure ``eps_bar``."""
    if not 0.0 <= eps_bar <= 1.0:
        raise ParameterError(f"eps_bar must lie in [0, 1], got {eps_bar}")
    src = f"pam_brgc({c.m})"
    if eps_bar == 0.0:
        return ChannelSet(np.zeros(c.m), 0.0, src, float("inf"))
    if eps_bar == 1.0:
        return ChannelSet(np.ones(c.m), 1.0, src, float("-inf"))
    if c.m == 1:
        # mean over one bit is the bit itself
        snr_db, _ = solve_snr(c, [eps_bar], **kw)
        return ChannelSet(np.array([float(eps_bar)]), float(eps_bar), src, float(snr_db[0]))
    snr_db, eps = solve_snr(c, [eps_bar], **kw)
    return ChannelSet(eps[0], float(eps_bar), src, float(snr_db[0]))


class ChannelFamily:
    """Map from average erasure ``eps_bar`` to a parallel-BEC vector.

    Subclasses implement :meth:`eps_matrix`, which is vectorized over many
    ``eps_bar`` values at once; the threshold scan relies on that.
    """

    m: int
    name: str

    def eps_matrix(self, eps_bars) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, eps_bar: float) -> ChannelSet:
        eps = self.eps_matrix([eps_bar])[0]
        return ChannelSet(eps, float(eps_bar), self.name)


class IdenticalFamily(ChannelFamily):
    """``m`` copies of BEC(eps_bar); ``m=1`` is the plain BEC."""

    def __init__(self, m: int = 1):
        if m < 1:
            raise ParameterError("m must be >= 1")
        self.m = m
        self.name = "bec" if m == 1 else f"identical({m})"

    def eps_matrix(self, eps_bars) -> np.ndarray:
        t = np.atleast_1d(np.asarray(eps_bars, dtype=float))
        return np.repeat(t[:, None], self.m, axis=1)


@dataclass
class PamFamily(ChannelFamily):
    """BEC surrogates of the BRGC-labeled 2^m-PAM bit channels.

    Solved SNRs are memoized per ``eps_bar`` so repeated threshold scans
    over the same grid pay the bisection cost once.
    """

    m: int = 2
    nodes: int = DEFAULT_NODES
    bracket_db: tuple[float, float] = DEFAULT_BRACKET_DB
    tol: float = DEFAULT_TOL
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.constellation = build_pam_brgc(self.m)
        self.name = f"pam_brgc({self.m})"

    def eps_matrix(self, eps_bars) -> np.ndarray:
        t = np.atleast_1d(np.asarray(eps_bars, dtype=float))
        if np.any((t < 0) | (t > 1)):
            raise ParameterError("eps_bar must lie in [0, 1]")
        out = np.empty((t.size, self.m))
        todo = []
        for k, v in enumerate(t):
            if v == 0.0:
                out[k] = 0.0
            elif v == 1.0:
                out[k] = 1.0
            elif self.m == 1:
                out[k] = v
            elif v in self._cache:
                out[k] = self._cache[v]
            else:
                todo.append(k)
        if todo:
            _, eps = solve_snr(self.constellation, t[todo], self.nodes, self.bracket_db, self.tol)
            for k, row in zip(todo, eps):
                self._cache[t[k]] = row
                out[k] = row
        return out

    def __call__(self, eps_bar: float) -> ChannelSet:
        return channel_set_from_eps_bar(
            self.constellation, eps_bar, nodes=self.nodes, bracket_db=self.bracket_db, tol=self.tol
        )


def make_family(name: str) -> ChannelFamily:
    """Parse a family name: ``bec``, ``identical:<m>``, ``pam4``, ``pam8`` or ``pam2``."""
    key = name.strip().lower()
    if key == "bec":
        return IdenticalFamily(1)
    if key.startswith("identical:"):
        return IdenticalFamily(int(key.split(":", 1)[1]))
    pam = {"pam2": 1, "pam4": 2, "pam8": 3}
    if key in pam:
        return PamFamily(pam[key])
    raise ParameterError(f"unknown channel family {name!r}")
