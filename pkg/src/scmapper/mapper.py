"""Assignment matrices (bit mappers) and their file format.

An assignment matrix ``A`` is a plain ``(m, L)`` float array: ``A[i, j]`` is
the fraction of variable nodes at spatial position ``j + 1`` sent over
channel ``i + 1``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

TOL = 1e-9


@dataclass(frozen=True)
class ConstraintSet:
    """Linear constraints defining the valid mappers.

    Only the BICM set ships: entries in [0, 1], unit column sums, row sums
    ``L / m`` (every channel used equally often).
    """

    name: str = "bicm"
    lower: float = 0.0
    upper: float = 1.0
    column_sum: float = 1.0

    def row_sum(self, m: int, L: int) -> float:
        return L / m


BICM = ConstraintSet()


@dataclass(frozen=True)
class Violation:
    kind: str  # "range" | "column_sum" | "row_sum" | "shape"
    index: tuple
    magnitude: float

    def __str__(self) -> str:
        where = ",".join(str(i + 1) for i in self.index)
        return f"{self.kind} violation at ({where}): {self.magnitude:.3e}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


def uniform(m: int, L: int) -> np.ndarray:
    if m < 1 or L < 1:
        raise ParameterError(f"need m >= 1 and L >= 1, got m={m}, L={L}")
    return np.full((m, L), 1.0 / m)


def validate(A, constraints: ConstraintSet = BICM, tol: float = TOL) -> ValidationReport:
    """Check every constraint and report each violation; never raises."""
    report = ValidationReport()
    try:
        A = np.asarray(A, dtype=float)
    except (TypeError, ValueError):
        report.violations.append(Violation("shape", (), float("nan")))
        return report
    if A.ndim != 2 or A.size == 0 or not np.all(np.isfinite(A)):
        report.violations.append(Violation("shape", (), float("nan")))
        return report
    m, L = A.shape
    below = constraints.lower - A
    above = A - constraints.upper
    for i, j in zip(*np.nonzero((below > tol) | (above > tol))):
        report.violations.append(Violation("range", (int(i), int(j)), float(max(below[i, j], above[i, j]))))
    col = A.sum(axis=0) - constraints.column_sum
    for j in np.nonzero(np.abs(col) > tol)[0]:
        report.violations.append(Violation("column_sum", (int(j),), float(col[j])))
    row = A.sum(axis=1) - constraints.row_sum(m, L)
    for i in np.nonzero(np.abs(row) > tol)[0]:
        report.violations.append(Violation("row_sum", (int(i),), float(row[i])))
    return report


def input_eps(A, eps) -> np.ndarray:
    """Per-position input erasure ``eps @ A``.

    ``eps`` may be a single length-m vector or a ``(B, m)`` stack, giving
    ``(L,)`` or ``(B, L)`` respectively.
    """
    A = np.asarray(A, dtype=float)
    eps = np.asarray(getattr(eps, "eps", eps), dtype=float)
    if eps.shape[-1] != A.shape[0]:
        raise ParameterError(f"channel count {eps.shape[-1]} does not match mapper rows {A.shape[0]}")
    return eps @ A


def flip_columns(A) -> np.ndarray:
    return np.asarray(A)[:, ::-1].copy()


def rotate_columns(A, k: int) -> np.ndarray:
    """Cyclic shift: column ``j`` moves to ``(j + k) mod L``."""
    return np.roll(np.asarray(A), k, axis=1)


def canonical_circular(A, eps) -> np.ndarray:
    """Presentation form of a circular mapper.

    Rotates so the position with the smallest input erasure comes first,
    then flips (keeping that position first) if the second half of the chain
    carries less erasure than the first.
    """
    A = np.asarray(A, dtype=float)
    e = input_eps(A, eps)
    out = rotate_columns(A, -int(np.argmin(e)))
    e = input_eps(out, eps)
    L = e.size
    if e[1 : (L + 1) // 2].sum() > e[L // 2 + 1 :].sum():
        out = rotate_columns(flip_columns(out), 1)
    return out


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_mapper(path, A, meta: dict | None = None) -> None:
    """Write ``A`` as CSV (m rows, L columns) plus a JSON sidecar."""
    A = np.asarray(A, dtype=float)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = {"m": A.shape[0], "L": A.shape[1]}
    info.update(meta or {})
    _atomic_write(path, "\n".join(",".join(repr(float(v)) for v in row) for row in A) + "\n")
    _atomic_write(sidecar_path(path), json.dumps(info, indent=2, sort_keys=True, default=_plain) + "\n")


def load_mapper(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        if (meta.get("m"), meta.get("L")) != A.shape:
            raise ParameterError(f"{side}: shape {meta.get('m')}x{meta.get('L')} does not match CSV {A.shape}")
    return A, meta


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
