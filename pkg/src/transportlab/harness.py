"""(epsilon, h) sweeps and the bound check for the quantitative estimate

    Q_{1,h}(n(t)) <= e^{C t} (Q_{1,h}(n0) + int_0^t Q_{1,h}(d) + C eps^2/h^2 + C |log h|^{1/pbar}).

One simulation per epsilon; ``h`` is a pure diagnostic parameter, so every
``h`` is evaluated on the same trajectory. A single constant ``C`` is fitted
for all right-hand-side occurrences.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .configio import config_from_dict, config_hash, config_to_dict, strict_keys
from .errors import ConfigError, StructuralUnavailable
from .kernels import KernelSpec
from .metrics import divergence_split, qnorm, w1p_seminorm
from .model import ScalarField, SimConfig
from .scenarios import scenario
from .solver import run
from . import spectral

__all__ = [
    "SweepSpec",
    "BoundRow",
    "BoundReport",
    "run_sweep",
    "fit_constant",
    "feasible_mask",
    "sweep_from_dict",
    "load_sweep",
    "default_workers",
    "WORKERS_ENV",
]

WORKERS_ENV = "TRANSPORTLAB_WORKERS"
C_MAX = 1e3
C_MIN = 1e-6
TERM_NAMES = ("q0", "d_term", "visc", "log_term")
# min(2, p) with p = 2: every velocity here is in W^{1,2} (see run_info["w1p_2"])
P_BAR = 2.0


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}", WORKERS_ENV) from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1", WORKERS_ENV)
    return n


@dataclass(frozen=True, eq=False)
class SweepSpec:
    """Sweep definition.

    ``p`` is the exponent of the kernel norm on both sides (1 for the
    estimate as stated); ``levels`` is the level count of the ``p = 1`` fast
    path. ``c_max`` caps the fitted constant.
    """

    base: SimConfig
    epsilon_list: tuple[float, ...]
    h_list: tuple[float, ...]
    p: int = 1
    snapshot_times: tuple[float, ...] = ()
    workers: int = 1
    levels: int = 64
    c_max: float = C_MAX

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon_list)
        hs = tuple(float(h) for h in self.h_list)
        ts = tuple(float(t) for t in self.snapshot_times)
        object.__setattr__(self, "epsilon_list", eps)
        object.__setattr__(self, "h_list", hs)
        object.__setattr__(self, "snapshot_times", ts)
        if not eps or any(not (e > 0 and math.isfinite(e)) for e in eps):
            raise ConfigError("sweep epsilons must be > 0", "epsilon_list")
        if not hs or any(not (0 < h < 1) for h in hs):
            raise ConfigError("h values must lie in (0, 1)", "h_list")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("h_list must be strictly decreasing", "h_list")
        if self.p not in (1, 2):
            raise ConfigError(f"p must be 1 or 2, got {self.p}", "p")
        if not ts:
            raise ConfigError("need at least one snapshot time", "snapshot_times")
        if any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] < 0 or ts[-1] > self.base.t_final:
            raise ConfigError("snapshot times must increase within [0, t_final]", "snapshot_times")
        if int(self.workers) < 1:
            raise ConfigError("must be >= 1", "workers")
        if int(self.levels) < 2:
            raise ConfigError("must be >= 2", "levels")
        if not self.c_max > 0:
            raise ConfigError("must be > 0", "c_max")


@dataclass(frozen=True)
class BoundRow:
    epsilon: float
    h: float
    t: float
    lhs: float
    q0: float
    d_term: float
    visc: float
    log_term: float

    def rhs(self, C: float) -> float:
        growth = math.exp(C * self.t) if C * self.t < 700.0 else math.inf
        return growth * (self.q0 + self.d_term + C * self.visc + C * self.log_term)

    def dominant(self, C: float) -> str:
        terms = {"q0": self.q0, "d_term": self.d_term, "visc": C * self.visc, "log_term": C * self.log_term}
        return max(TERM_NAMES, key=lambda k: terms[k])


ROW_FIELDS = ("epsilon", "h", "t", "lhs", "q0", "d_term", "visc", "log_term")


def feasible_mask(rows: Sequence[BoundRow], C: float) -> np.ndarray:
    """Rowwise ``lhs <= rhs(C)``; monotone in ``C`` since every term is >= 0."""
    return np.array([r.lhs <= r.rhs(C) for r in rows], dtype=bool)


def _loss(rows: Sequence[BoundRow], C: float) -> float:
    return float(sum(max(0.0, r.lhs - r.rhs(C)) ** 2 for r in rows))


def fit_constant(
    rows: Sequence[BoundRow], c_min: float = C_MIN, c_max: float = C_MAX, grid_points: int = 91, bisect_steps: int = 60
) -> tuple[float, bool]:
    """Smallest ``C`` in ``[c_min, c_max]`` minimizing ``sum max(0, lhs - rhs(C))^2``.

    The loss is nonincreasing in ``C``; a log-spaced scan finds the first
    grid point with zero loss and bisection then locates the threshold.
    Returns ``(C, feasible)``; if even ``c_max`` leaves a positive loss the
    result is ``(c_max, False)``.
    """
    if c_min >= c_max:
        return c_max, _loss(rows, c_max) == 0.0
    grid = np.geomspace(c_min, c_max, grid_points)
    losses = [_loss(rows, float(c)) for c in grid]
    zero = [i for i, v in enumerate(losses) if v == 0.0]
    if not zero:
        return c_max, False
    i = zero[0]
    if i == 0:
        return float(grid[0]), True
    lo, hi = float(grid[i - 1]), float(grid[i])
    for _ in range(bisect_steps):
        mid = math.sqrt(lo * hi)
        if _loss(rows, mid) == 0.0:
            hi = mid
        else:
            lo = mid
    return hi, True


@dataclass
class BoundReport:
    rows: list[BoundRow]
    fitted_C: float
    feasible: list[bool]
    c_floor: float
    c_max: float
    p: int
    p_bar: float
    infeasible_at_c_max: bool
    dominant: list[str]
    run_info: list[dict] = field(default_factory=list)
    notes: tuple[str, ...] = ()

    @property
    def feasible_count(self) -> int:
        return int(sum(self.feasible))

    @property
    def feasible_fraction(self) -> float:
        return self.feasible_count / len(self.rows) if self.rows else 1.0

    def summary(self) -> dict:
        dom = {k: self.dominant.count(k) for k in TERM_NAMES}
        return {
            "fitted_C": self.fitted_C,
            "c_floor": self.c_floor,
            "c_max": self.c_max,
            "infeasible_at_c_max": self.infeasible_at_c_max,
            "rows": len(self.rows),
            "feasible_rows": self.feasible_count,
            "feasible_fraction": self.feasible_fraction,
            "p": self.p,
            "p_bar": self.p_bar,
            "dominant_counts": dom,
            "runs": self.run_info,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(ROW_FIELDS) + ["rhs", "feasible", "dominant"])
        for r, ok, dom in zip(self.rows, self.feasible, self.dominant):
            w.writerow([repr(getattr(r, k)) for k in ROW_FIELDS] + [repr(r.rhs(self.fitted_C)), int(ok), dom])
        return buf.getvalue()

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jp, cp = out / "bound_report.json", out / "bound_rows.csv"
        jp.write_text(self.to_json())
        cp.write_text(self.to_csv())
        return jp, cp


NOTES = (
    "C is one generic constant fitted for all right-hand-side terms; it is not a derived value.",
    "The initial-data term uses the same kernel K_h (support radius 2) as the left-hand side.",
    "Dominant-term labels and feasibility are structural checks, not a proof of the estimate.",
    "p_bar = min(2, p) with p = 2 from the discrete W^{1,2} norm of the velocity.",
)


def _member(args: tuple[dict, float, tuple[float, ...], tuple[float, ...], int, int]) -> dict:
    """One epsilon: run, then evaluate every (h, t) row. Top level so it pickles."""
    cfg_dict, eps, hs, times, p, levels = args
    config = replace(config_from_dict(cfg_dict), epsilon=eps)
    traj, series = run(config, snapshot_times=times)
    grid = config.grid
    lip = config.flux.lipschitz
    # snapshot index per requested time (t = 0 is always the first snapshot)
    index = [int(np.argmin(np.abs(np.asarray(traj.times) - t))) for t in times]
    d_fields = []
    div_sup = 0.0
    w1p = 0.0
    for n, a in zip(traj.fields, traj.velocities):
        try:
            d_part, _, _ = divergence_split(a, n, config.coupling)
            d_vals = d_part.values
        except StructuralUnavailable:
            d_vals = spectral.spectral_divergence(a.components, grid)
        d_fields.append(ScalarField(grid, d_vals))
        div_sup = max(div_sup, float(np.abs(spectral.fd_divergence(a.components, grid)).max()))
        w1p = max(w1p, w1p_seminorm(a, 2.0))
    snap_t = np.asarray(traj.times)
    rows = []
    for h in hs:
        kern = KernelSpec(h, grid.dim)
        q_n = [qnorm(n, kern, p, levels) for n in traj.fields]
        q_d = [qnorm(d, kern, p, levels) for d in d_fields]
        # left-endpoint time integral of the d-part kernel norm
        cum = np.concatenate([[0.0], np.cumsum(np.diff(snap_t) * np.asarray(q_d[:-1]))])
        lg = abs(math.log(h))
        for t, i in zip(times, index):
            rows.append(
                {
                    "epsilon": eps,
                    "h": h,
                    "t": float(t),
                    "lhs": q_n[i],
                    "q0": q_n[0],
                    "d_term": float(cum[i]),
                    "visc": eps * eps / (h * h),
                    "log_term": lg ** (1.0 / P_BAR),
                }
            )
    info = {
        "epsilon": eps,
        "steps": len(series.steps),
        "mass_drift": series.max_relative_mass_drift(),
        "gronwall_rate": lip * div_sup,
        "w1p_2": w1p,
    }
    return {"rows": rows, "info": info}



def run_sweep(spec: SweepSpec, workers: int | None = None) -> BoundReport:
    """Run every epsilon (in parallel if ``workers > 1``) and fit ``C``.

    Results are gathered in epsilon order, so reports do not depend on the
    worker count. The fit is floored at the Gronwall rate
    ``Lip f * sup_t ||div a||_inf`` of the runs: ``e^{Ct}`` in the estimate
    stems from that a priori bound and a smaller ``C`` carries no meaning.
    """
    nw = int(workers if workers is not None else spec.workers)
    cfg_dict = config_to_dict(spec.base)
    jobs = [(cfg_dict, e, spec.h_list, spec.snapshot_times, spec.p, spec.levels) for e in spec.epsilon_list]
    if nw > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(nw, len(jobs))) as pool:
            results = list(pool.map(_member, jobs))
    else:
        results = [_member(j) for j in jobs]
    rows = [BoundRow(**r) for res in results for r in res["rows"]]
    info = [res["info"] for res in results]
    c_floor = max([i["gronwall_rate"] for i in info] + [C_MIN])
    C, ok = fit_constant(rows, c_min=min(c_floor, spec.c_max), c_max=spec.c_max)
    mask = feasible_mask(rows, C)
    return BoundReport(
        rows=rows,
        fitted_C=C,
        feasible=[bool(m) for m in mask],
        c_floor=c_floor,
        c_max=spec.c_max,
        p=spec.p,
        p_bar=P_BAR,
        infeasible_at_c_max=not ok,
        dominant=[r.dominant(C) for r in rows],
        run_info=info,
        notes=NOTES + (f"base config sha256 {config_hash(spec.base)}",),
    )


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

SWEEP_KEYS = {"epsilon_list", "h_list", "snapshot_times"}
SWEEP_OPTIONAL = {"base", "scenario", "scenario_overrides", "p", "workers", "levels", "c_max"}


def sweep_from_dict(obj: Any) -> SweepSpec:
    """Parse a sweep document.

    The base configuration is either a full ``"base"`` object or a
    ``"scenario"`` name with optional ``"scenario_overrides"``
    (``n_per_axis``, ``epsilon``, ``t_final``, ``cfl_factor``).
    """
    strict_keys(obj, "", SWEEP_KEYS, SWEEP_OPTIONAL)
    if ("base" in obj) == ("scenario" in obj):
        raise ConfigError("give exactly one of 'base' or 'scenario'", "base")
    if "base" in obj:
        if "scenario_overrides" in obj:
            raise ConfigError("only valid together with 'scenario'", "scenario_overrides")
        base = config_from_dict(obj["base"])
    else:
        over = dict(strict_keys(obj.get("scenario_overrides", {}), "scenario_overrides", set(),
                                {"n_per_axis", "epsilon", "t_final", "cfl_factor"}))
        base = scenario(str(obj["scenario"]), **over)

    def _list(key):
        v = obj[key]
        if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            raise ConfigError("expected a list of numbers", key)
        return tuple(float(x) for x in v)

    kw: dict[str, Any] = {}
    for key in ("p", "workers", "levels"):
        if key in obj:
            if isinstance(obj[key], bool) or not isinstance(obj[key], int):
                raise ConfigError(f"expected an integer, got {obj[key]!r}", key)
            kw[key] = obj[key]
    if "c_max" in obj:
        kw["c_max"] = float(obj["c_max"])
    return SweepSpec(base, _list("epsilon_list"), _list("h_list"), snapshot_times=_list("snapshot_times"), **kw)


def load_sweep(path) -> SweepSpec:
    from .configio import read_json

    return sweep_from_dict(read_json(path))
