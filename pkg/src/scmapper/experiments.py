"""Experiment tasks shared by the CLI subcommands and batch spec files.

Every task takes a flat options dict (the keys of a spec run entry) and an
output path, writes its artifact atomically and returns a JSON-able record.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import plotting
from .channel import ChannelSet, build_pam_brgc, direct_channel_set, make_family
from .density import ThresholdConfig, run_de, threshold
from .ensemble import EnsembleParams, design_rate, layout
from .errors import ParameterError, ScMapperError
from .mapper import _plain as _json_default
from .mapper import input_eps, load_mapper, save_mapper, uniform, validate
from .optimizer import OptRunConfig, iterative_threshold_opt, lift_assignment

log = logging.getLogger(__name__)

KINDS = ("channel-table", "rate", "threshold", "wave", "optimize", "lift")

DEFAULTS = {
    "dv": 4,
    "dc": 8,
    "boundary": "two_sided",
    "channel": "pam4",
    "mapper": "uniform",
    "delta": 1e-4,
    "p_tar": 1e-6,
    "l_max": 5000,
    "search": "linear_scan",
}


class SpecError(ScMapperError):
    """Malformed experiment spec."""


def gap(R: float, eps_bar_star: float) -> float:
    """Gap to capacity ``1 - eps_bar_star - R``."""
    return 1.0 - eps_bar_star - R


# ----------------------------------------------------------------------------
# option helpers


def _opt(o: dict, key: str):
    if key in o and o[key] is not None:
        return o[key]
    if key in DEFAULTS:
        return DEFAULTS[key]
    raise ParameterError(f"missing option {key!r}")


def _ensemble(o: dict, L=None, w=None) -> EnsembleParams:
    return EnsembleParams(int(_opt(o, "dv")), int(_opt(o, "dc")), int(L if L is not None else _opt(o, "L")),
                          int(w if w is not None else _opt(o, "w")), _opt(o, "boundary"))


def _threshold_cfg(o: dict) -> ThresholdConfig:
    return ThresholdConfig(float(_opt(o, "delta")), float(_opt(o, "p_tar")), int(_opt(o, "l_max")),
                           str(_opt(o, "search")))


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _mapper(o: dict, m: int, L: int) -> tuple[np.ndarray, str]:
    src = _opt(o, "mapper")
    if src == "uniform":
        return uniform(m, L), "uniform"
    A, _ = load_mapper(src)
    if A.shape != (m, L):
        raise ParameterError(f"mapper {src} has shape {A.shape}, expected {(m, L)}")
    rep = validate(A)
    if not rep.ok:
        raise ParameterError(f"mapper {src} is not valid:\n{rep}")
    return A, str(src)


def _channel_set(o: dict, eps_bar: float | None = None) -> ChannelSet:
    if o.get("eps") is not None:
        return direct_channel_set(o["eps"])
    fam = make_family(str(_opt(o, "channel")))
    return fam(float(eps_bar if eps_bar is not None else _opt(o, "eps_bar")))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _emit(out, text: str) -> None:
    if out is None or out == "-":
        print(text, end="")
    else:
        write_atomic(out, text)


# ----------------------------------------------------------------------------
# tasks


def task_channel_table(o: dict, out=None) -> dict:
    m = int(o.get("m", 2))
    points = int(o.get("points", 101))
    grid = np.linspace(float(o.get("start", 0.0)), float(o.get("stop", 1.0)), points)
    c = build_pam_brgc(m)
    fam = make_family({1: "pam2", 2: "pam4", 3: "pam8"}[m])
    rows = []
    for v in grid:
        v = float(v)
        if 0.0 < v < 1.0:
            cs = fam(v)
        else:
            cs = ChannelSet(np.full(m, v), v, fam.name, float("inf") if v == 0 else float("-inf"))
        rows.append([v, cs.snr_db, *cs.eps])
    header = ["eps_bar", "snr_db"] + [f"eps_{i + 1}" for i in range(c.m)]
    _emit(out, _csv_text(header, rows))
    if o.get("emit_plot_script") and out not in (None, "-"):
        plotting.write_script("channel-table", out, m=m)
    return {"rows": len(rows), "m": m}


def task_rate(o: dict, out=None) -> dict:
    rows = []
    for b, L, w in itertools.product(_as_list(_opt(o, "boundary")), _as_list(_opt(o, "L")), _as_list(_opt(o, "w"))):
        p = _ensemble({**o, "boundary": b}, L, w)
        rows.append([p.dv, p.dc, p.L, p.w, p.boundary.value, design_rate(p)])
    _emit(out, _csv_text(["dv", "dc", "L", "w", "boundary", "R"], rows))
    return {"rows": len(rows)}


def threshold_record(o: dict, L=None, w=None) -> dict:
    p = _ensemble(o, L, w)
    fam = make_family(str(_opt(o, "channel")))
    A, src = _mapper(o, fam.m, p.L)
    res = threshold(A, fam, p, _threshold_cfg(o))
    R = design_rate(p)
    return {**p.as_dict(), "channel": fam.name, "mapper": src, "eps_bar_star": res.eps_bar_star,
            "below_grid": res.below_grid, "R": R, "gap": gap(R, res.eps_bar_star)}


def task_threshold(o: dict, out=None) -> dict:
    Ls, ws = _as_list(_opt(o, "L")), _as_list(_opt(o, "w"))
    if len(Ls) == 1 and len(ws) == 1:
        rec = threshold_record(o, Ls[0], ws[0])
        _emit(out, json.dumps(rec, sort_keys=True) + "\n")
        return rec
    recs = [threshold_record(o, L, w) for L, w in itertools.product(Ls, ws)]
    rows = [[r["L"], r["w"], r["eps_bar_star"], r["R"], r["gap"]] for r in recs]
    _emit(out, _csv_text(["L", "w", "eps_bar_star", "R", "gap"], rows))
    if o.get("emit_plot_script") and out not in (None, "-"):
        plotting.write_script("threshold", out)
    return {"points": recs}


def task_wave(o: dict, out=None) -> dict:
    p = _ensemble(o)
    eps_bar = o.get("eps_bar")
    if o.get("eps") is not None:
        eps_bar = float(np.mean(o["eps"]))
    # a mapper sidecar may supply the operating point: its own threshold
    elif eps_bar in (None, "threshold"):
        _, meta = load_mapper(_opt(o, "mapper"))
        eps_bar = meta["threshold"]
    cs = _channel_set(o, float(eps_bar))
    A, src = _mapper(o, cs.m, p.L)
    cfg = _threshold_cfg(o)
    res = run_de(A, cs, p, cfg, record_trajectory=True)
    positions = list(layout(p).vn_positions)
    rows = [[l, *traj] for l, traj in enumerate(res.trajectory)]
    _emit(out, _csv_text(["iteration"] + [f"p_{j}" for j in positions], rows))
    if o.get("emit_plot_script") and out not in (None, "-"):
        plotting.write_script("wave", out)
    return {"eps_bar": float(eps_bar), "success": res.success, "iterations": res.iterations,
            "residual": res.residual, "mapper": src}


def opt_config(o: dict) -> OptRunConfig:
    base = OptRunConfig()
    kw = {}
    for key, cast in (("population", int), ("generations", int), ("F", float), ("CR", float),
                      ("seed", int), ("restarts", int), ("init_spread", float), ("max_outer", int),
                      ("fail_penalty", float)):
        if o.get(key) is not None:
            kw[key] = cast(o[key])
    outer = _threshold_cfg(o)
    inner = replace(outer, search="linear_scan", l_max=int(o.get("inner_l_max", base.inner.l_max)))
    return replace(base, inner=inner, outer=outer, **kw)


def optimize_one(o: dict, L, w, out) -> dict:
    p = _ensemble(o, L, w)
    fam = make_family(str(_opt(o, "channel")))
    cfg = opt_config(o)
    start = load_mapper(o["start"])[0] if o.get("start") else None
    res = iterative_threshold_opt(p, fam, cfg, start=start)
    R = design_rate(p)
    meta = {"ensemble": p.as_dict(), "channel": fam.name, "threshold": res.threshold,
            "uniform_threshold": res.uniform_threshold, "R": R, "gap": gap(R, res.threshold),
            "history": res.as_dict()["history"], "seed": res.seed, "config": res.config}
    if out is not None:
        save_mapper(out, res.best, meta)
        if o.get("emit_plot_script"):
            plotting.write_script("mapper", out)
    return {**meta, "wall_time": res.wall_time, "output": None if out is None else str(out)}


def task_optimize(o: dict, out=None) -> dict:
    Ls, ws = _as_list(_opt(o, "L")), _as_list(_opt(o, "w"))
    if len(Ls) == 1 and len(ws) == 1:
        return optimize_one(o, Ls[0], ws[0], out)
    base = Path(out) if out else None
    recs = []
    for L, w in itertools.product(Ls, ws):
        path = None if base is None else base.with_name(f"{base.stem}_L{L}_w{w}{base.suffix or '.csv'}")
        recs.append(optimize_one(o, L, w, path))
    return {"points": recs}


def task_lift(o: dict, out=None) -> dict:
    A2, meta = load_mapper(_opt(o, "mapper"))
    eps_bar = float(o.get("eps_bar") or meta["threshold"])
    src = make_family(str(o.get("channel", "pam4")))
    dst = make_family(str(o.get("target_channel", {2: "pam4", 3: "pam8"}[int(o.get("target_m", 3))])))
    target = input_eps(A2, src(eps_bar))
    res = lift_assignment(target, dst(eps_bar))
    rec = {"eps_bar": eps_bar, "source_channel": src.name, "target_channel": dst.name, **res.as_dict()}
    if res.feasible and out is not None:
        save_mapper(out, res.A, {**{k: v for k, v in meta.items() if k not in ("m", "L")}, "lift": rec})
    return rec


TASKS = {
    "channel-table": task_channel_table,
    "rate": task_rate,
    "threshold": task_threshold,
    "wave": task_wave,
    "optimize": task_optimize,
    "lift": task_lift,
}


# ----------------------------------------------------------------------------
# batch specs


@dataclass
class RunSpec:
    name: str
    kind: str
    options: dict
    output: str | None = None


@dataclass
class ExperimentSpec:
    runs: list[RunSpec] = field(default_factory=list)
    seed: int | None = None
    output_dir: str = "results"
    workers: int = 1
    emit_plot_script: bool = False


def parse_spec(data) -> ExperimentSpec:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SpecError("spec must be a mapping")
    unknown = set(data) - {"runs", "seed", "output_dir", "workers", "defaults", "emit_plot_script"}
    if unknown:
        raise SpecError(f"unknown top-level keys: {sorted(unknown)}")
    defaults = data.get("defaults") or {}
    if not isinstance(defaults, dict):
        raise SpecError("defaults must be a mapping")
    runs, seen = [], set()
    for k, entry in enumerate(data.get("runs") or []):
        if not isinstance(entry, dict):
            raise SpecError(f"run #{k + 1} must be a mapping")
        entry = dict(entry)
        name = entry.pop("name", None)
        kind = entry.pop("kind", None)
        if not name:
            raise SpecError(f"run #{k + 1} has no name")
        if name in seen:
            raise SpecError(f"duplicate run name {name!r}")
        if kind not in KINDS:
            raise SpecError(f"run {name!r}: unknown kind {kind!r}; expected one of {KINDS}")
        seen.add(name)
        output = entry.pop("output", None)
        runs.append(RunSpec(str(name), kind, {**defaults, **entry}, output))
    seed = data.get("seed")
    try:
        workers = int(data.get("workers", 1))
    except (TypeError, ValueError):
        raise SpecError("workers must be an integer") from None
    return ExperimentSpec(runs, None if seed is None else int(seed), str(data.get("output_dir", "results")),
                          max(1, workers), bool(data.get("emit_plot_script", False)))


def load_spec(path) -> ExperimentSpec:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    return parse_spec(data)


def _resolve(spec: ExperimentSpec, run: RunSpec) -> tuple[dict, Path | None]:
    opts = dict(run.options)
    if spec.seed is not None and "seed" not in opts:
        opts["seed"] = spec.seed
    if spec.emit_plot_script:
        opts.setdefault("emit_plot_script", True)
    out = None if run.output is None else Path(spec.output_dir) / run.output
    mapper = opts.get("mapper")
    if isinstance(mapper, str) and mapper != "uniform" and not Path(mapper).is_absolute():
        candidate = Path(spec.output_dir) / mapper
        if candidate.exists() or not Path(mapper).exists():
            opts["mapper"] = str(candidate)
    return opts, out


def _dependencies(spec: ExperimentSpec) -> dict[str, set[str]]:
    produced = {}
    for r in spec.runs:
        if r.output is not None:
            produced[str(Path(spec.output_dir) / r.output)] = r.name
    deps = {}
    for r in spec.runs:
        opts, _ = _resolve(spec, r)
        m = opts.get("mapper")
        deps[r.name] = {produced[m]} if isinstance(m, str) and m in produced and produced[m] != r.name else set()
    return deps


def run_spec(spec: ExperimentSpec, workers: int | None = None, summary_path=None) -> dict:
    """Execute every run; independent runs share a thread pool.

    A run whose mapper is the output of another run waits for it.  Failures
    are caught per run and reported in the summary.
    """
    workers = max(1, workers or spec.workers)
    deps = _dependencies(spec)
    by_name = {r.name: r for r in spec.runs}
    results: dict[str, dict] = {}
    t0 = time.time()

    def execute(run: RunSpec) -> dict:
        start = time.perf_counter()
        bad = [d for d in deps[run.name] if results.get(d, {}).get("status") != "ok"]
        if bad:
            return {"status": "failed", "error": f"dependency failed: {', '.join(sorted(bad))}", "seconds": 0.0}
        try:
            opts, out = _resolve(spec, run)
            if "mapper" in opts and opts["mapper"] != "uniform" and not Path(opts["mapper"]).exists():
                raise ParameterError(f"mapper file {opts['mapper']} does not exist")
            rec = TASKS[run.kind](opts, out)
            return {"status": "ok", "kind": run.kind, "output": None if out is None else str(out),
                    "record": rec, "seconds": time.perf_counter() - start}
        except Exception as exc:  # isolate per-run failures
            log.exception("run %s failed", run.name)
            return {"status": "failed", "kind": run.kind, "error": f"{type(exc).__name__}: {exc}",
                    "seconds": time.perf_counter() - start}

    pending = list(spec.runs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while pending:
            ready = [r for r in pending if deps[r.name] <= set(results)]
            if not ready:
                for r in pending:
                    results[r.name] = {"status": "failed", "error": "dependency cycle", "seconds": 0.0}
                break
            futures = {r.name: pool.submit(execute, r) for r in ready}
            for name, fut in futures.items():
                results[name] = fut.result()
            pending = [r for r in pending if r.name not in results]

    summary = {
        "started": t0,
        "finished": time.time(),
        "runs": [{"name": r.name, **results[r.name]} for r in spec.runs if r.name in by_name],
        "failed": sum(1 for r in results.values() if r["status"] != "ok"),
    }
    if summary_path is None:
        summary_path = Path(spec.output_dir) / "summary.json"
    if spec.runs or summary_path is not None:
        write_atomic(summary_path, json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return summary
