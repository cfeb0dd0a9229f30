"""Monte Carlo runner, sweep presets and CSV emission.

Every trial is a pure function of (scenario, channel slice), so running the
trials in worker processes gives exactly the rows of a serial run. Wall-clock
columns are zero unless timing is requested, which keeps the CSV of a run a
deterministic function of the config and the master seed.
"""

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np
from scipy import stats

from .baselines import SchemeId, baseline_energy, baseline_sumrate
from .capacity import iwf_max_sumrate
from .channel import ChannelTrace, generate, scale_reference_snr, scale_to_snr
from .errors import ConvergenceError, DomainError, EmptyResultError, InfeasibleError, ParseError
from .minpmac import min_pmac
from .scenario import require_valid, unit_convert

COLUMNS = ("trial", "scheme", "snr_db", "users", "distance_m", "sum_rate_mbps", "total_energy_mw", "converged",
           "iters", "wall_ms")
SCHEMES = ("minpmac", "oma", "noma", "mcnoma", "iwf")
MODES = ("energy", "rate")
PRESETS = ("fig-users", "fig-distance", "fig-snr")
METRICS = ("sum_rate_mbps", "total_energy_mw")

#: Schemes run at every sweep point, per mode. Rate-mode minPMAC is the MAC
#: sum capacity, which is what iterative water-filling computes.
MODE_SCHEMES = {
    "rate": ("oma", "noma", "mcnoma", "iwf"),
    "energy": ("oma", "noma", "mcnoma", "minpmac"),
}

USER_SWEEP = tuple(range(2, 9))
DISTANCE_SWEEP = tuple(float(d) for d in range(1, 11))
SNR_SWEEP = tuple(float(s) for s in range(-10, 51, 5))
DISTANCE_EXPONENT = 4.0
TARGET_SLACK = 1e-6


@dataclass(frozen=True)
class SolverSpec:
    scheme: str
    mode: str = "energy"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "energy" and self.scheme == "iwf":
            raise DomainError("iwf only solves the sum-rate problem")

    @property
    def label(self):
        """Scheme column value, e.g. ``"oma/rate"``."""
        return f"{self.scheme}/{self.mode}"

    @classmethod
    def parse(cls, label):
        scheme, sep, mode = str(label).partition("/")
        if not sep:
            raise ParseError(f"scheme label {label!r} lacks a '/mode' suffix")
        return cls(scheme, mode)


@dataclass(frozen=True)
class Row:
    trial: int
    scheme: str
    snr_db: float
    users: int
    distance_m: float
    sum_rate_mbps: float
    total_energy_mw: float
    converged: bool
    iters: int
    wall_ms: float


@dataclass
class ExperimentResult:
    rows: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, ExperimentResult) and self.rows == other.rows

    def schemes(self):
        return list(dict.fromkeys(r.scheme for r in self.rows))

    def sweep_variable(self):
        """Column that changes across the sweep (users, then distance, then SNR)."""
        for name in ("users", "distance_m", "snr_db"):
            if len({getattr(r, name) for r in self.rows}) > 1:
                return name
        return "snr_db"

    def summary(self, metric):
        """``{scheme: [(x, stats), ...]}`` over converged rows, x ascending."""
        var = self.sweep_variable()
        groups = {}
        for r in self.rows:
            groups.setdefault(r.scheme, {}).setdefault(getattr(r, var), []).append(r)
        out = {}
        for scheme, by_x in groups.items():
            series = []
            for x in sorted(by_x):
                rows = by_x[x]
                ok = [getattr(r, metric) for r in rows if r.converged]
                st = aggregate(ok) if ok else None
                series.append((x, st, len(rows) - len(ok)))
            out[scheme] = series
        return out


# -- statistics ---------------------------------------------------------------------


def aggregate(values, level=0.95):
    """Mean, sample std and a Student-t confidence interval.

    >>> aggregate([1.0, 2.0, 3.0])["std"]
    1.0
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n == 0:
        raise EmptyResultError("no values to aggregate")
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if n > 1 else 0.0
    half = float(stats.t.ppf(0.5 + level / 2.0, n - 1) * std / math.sqrt(n)) if n > 1 else 0.0
    return {"n": n, "mean": mean, "std": std, "ci_low": mean - half, "ci_high": mean + half}


# -- one trial ------------------------------------------------------------------------


def default_budgets(scenario):
    return np.full(scenario.num_users, scenario.max_power_mw)


def solve_trial(spec, scenario, H, budgets=None):
    """Run one scheme on one channel slice.

    Returns ``(sum_rate_bits, total_energy_mw, converged, iters)``. Infeasible
    or non-converging solves come back as a non-converged zero row.
    """
    H = np.asarray(H, dtype=np.complex128)
    sigma2 = scenario.noise_power_mw
    try:
        if spec.mode == "rate":
            budgets = default_budgets(scenario) if budgets is None else np.asarray(budgets, dtype=float)
            if spec.scheme in ("iwf", "minpmac"):
                alloc, total = iwf_max_sumrate(H, budgets, sigma2)
                return float(total), alloc.total_energy, bool(alloc.converged), int(alloc.iterations)
            alloc, total = baseline_sumrate(spec.scheme, H, budgets, sigma2)
            return float(total), alloc.total_energy, True, 0
        if spec.scheme == "minpmac":
            sol = min_pmac(scenario, H)
            return sol.sum_rate, sol.total_energy, bool(sol.converged), int(sol.iterations)
        b = scenario.targets
        alloc = baseline_energy(SchemeId.parse(spec.scheme), H, b, scenario.weights, sigma2)
        met = bool(np.all(alloc.rates >= b - TARGET_SLACK * np.maximum(1.0, b)))
        return alloc.sum_rate, alloc.total_energy, met, 0
    except (InfeasibleError, ConvergenceError):
        return 0.0, 0.0, False, 0


def _trial_job(args):
    spec, scenario, H, budgets, timing = args
    t0 = time.perf_counter()
    out = solve_trial(spec, scenario, H, budgets)
    wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
    rate, energy, ok, iters = out
    if not (math.isfinite(rate) and math.isfinite(energy)):
        rate, energy, ok = 0.0, 0.0, False
    return rate, energy, ok, iters, wall


def _map(jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [_trial_job(j) for j in jobs]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
        chunk = max(1, len(jobs) // (4 * threads))
        return list(pool.map(_trial_job, jobs, chunksize=chunk))


def _channels(trace):
    h = trace.h if isinstance(trace, ChannelTrace) else np.asarray(trace, dtype=np.complex128)
    if h.ndim == 3:
        h = h[None]
    if h.ndim != 4 or h.shape[0] < 1:
        raise DomainError("need at least one channel trial of shape (U, N, L)")
    return h


@dataclass
class MonteCarloResult:
    rows: list
    stats: dict
    converged: int
    failed: int


def _jobs(specs, scenario, trace, point, budgets, timing):
    h = _channels(trace)
    keys = [(spec, t, scenario, point) for spec in specs for t in range(h.shape[0])]
    return keys, [(spec, scenario, h[t], budgets, timing) for spec, t, _, _ in keys]


def make_rows(keys, results):
    rows = []
    for (spec, t, s, point), (rate, energy, ok, iters, wall) in zip(keys, results):
        mbps = unit_convert(rate, "bits->mbps", s.bandwidth_hz, s.num_subcarriers)
        rows.append(Row(t, spec.label, float(point["snr_db"]), int(point["users"]), float(point["distance_m"]),
                        mbps, float(energy), bool(ok), int(iters), float(wall)))
    return rows


def default_point(scenario):
    return {"snr_db": scenario.snr_db, "users": scenario.num_users,
            "distance_m": float(np.mean(scenario.distances))}


def run_spec(spec, trace, scenario, budgets=None, threads=1, timing=False, point=None):
    """Rows of ``spec`` on every trial of ``trace`` without aggregation."""
    require_valid(scenario)
    point = default_point(scenario) if point is None else point
    keys, jobs = _jobs([spec], scenario, trace, point, budgets, timing)
    return make_rows(keys, _map(jobs, threads))


def monte_carlo(spec, trace, scenario, budgets=None, threads=1, timing=False, point=None):
    """Run ``spec`` on every trial of ``trace`` and aggregate the converged ones.

    Parameters
    ----------
    spec : SolverSpec
    trace : ChannelTrace or ndarray, shape (trials, U, N, L)
    budgets : array_like, optional
        Per-user power budgets for rate mode (default ``p_max`` each).
    threads : int
        Worker processes; results do not depend on it.
    timing : bool
        Fill ``wall_ms`` with the solve time (otherwise 0).

    Returns
    -------
    MonteCarloResult
        ``stats[metric]`` holds mean, sample std and the 95% interval.

    Raises
    ------
    EmptyResultError
        If no trial converged.
    """
    rows = run_spec(spec, trace, scenario, budgets, threads, timing, point)
    good = [r for r in rows if r.converged]
    if not good:
        raise EmptyResultError(f"all {len(rows)} trials of {spec.label} failed")
    st = {m: aggregate([getattr(r, m) for r in good]) for m in METRICS}
    return MonteCarloResult(rows, st, len(good), len(rows) - len(good))


# -- presets ----------------------------------------------------------------------------


def users_scenario(scenario, users):
    return scenario.with_(num_users=users, distances_m=(3.0,) * users)


def distance_scenario(scenario, d):
    return scenario.with_(distances_m=(d,) * scenario.num_users, pathloss_exponent=DISTANCE_EXPONENT)


def snr_scenario(scenario):
    return scenario.with_(num_users=3, num_ap_antennas=2, distances_m=(3.0, 3.0, 3.0))


def preset_points(name, scenario, trials):
    """Yield ``(scenario_k, trace_k, point, budgets, modes)`` for each sweep point."""
    if name == "fig-users":
        # Equal per-user shares of a fixed total: the base scenario's U times p_max.
        total = scenario.num_users * scenario.max_power_mw
        for u in USER_SWEEP:
            s = users_scenario(scenario, u)
            tr = scale_to_snr(generate(s, trials), s, scenario.snr_db)
            yield s, tr, {"snr_db": scenario.snr_db, "users": u, "distance_m": 3.0}, np.full(u, total / u), ("rate",)
    elif name == "fig-distance":
        for d in DISTANCE_SWEEP:
            s = distance_scenario(scenario, d)
            # snr_db is the receive SNR a user at 1 m would see.
            tr = scale_reference_snr(generate(s, trials), s, scenario.snr_db)
            snr = scenario.snr_db - 10.0 * DISTANCE_EXPONENT * math.log10(d)
            point = {"snr_db": snr, "users": s.num_users, "distance_m": d}
            yield s, tr, point, default_budgets(s), ("energy", "rate")
    elif name == "fig-snr":
        s = snr_scenario(scenario)
        base = generate(s, trials)
        for snr in SNR_SWEEP:
            point = {"snr_db": snr, "users": 3, "distance_m": 3.0}
            yield s.with_(snr_db=snr), scale_to_snr(base, s, snr), point, default_budgets(s), ("rate",)
    else:
        raise DomainError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")


def preset_header(name, scenario):
    """Human-readable description of the power and rate mappings of a preset."""
    s = snr_scenario(scenario) if name == "fig-snr" else scenario
    mbps = [unit_convert(b, "bits->mbps", s.bandwidth_hz, s.num_subcarriers) for b in s.rate_targets]
    lines = [f"preset {name}: U={s.num_users} L={s.num_ap_antennas} N={s.num_subcarriers} seed={s.seed}"]
    if name == "fig-users":
        total = scenario.num_users * scenario.max_power_mw
        lines.append(f"rate mode: total budget {total:.6g} mW split equally over U users")
    else:
        lines.append(f"rate mode: per-user budget {s.max_power_mw:.6g} mW ({s.max_power_dbm:g} dBm)")
    if name == "fig-distance":
        lines.append("energy mode: per-user targets " + ", ".join(f"{b:.6g} bits ({m:.6g} Mbps)"
                                                              for b, m in zip(s.rate_targets, mbps)))
        lines.append(f"path-loss exponent {DISTANCE_EXPONENT:g}; snr_db {scenario.snr_db:g} dB at 1 m")
    return lines


def run_preset(name, scenario, trials=100, threads=1, timing=False):
    """Run a sweep preset and return all rows.

    Parameters
    ----------
    name : {"fig-users", "fig-distance", "fig-snr"}
    scenario : Scenario
        Base config; the preset overrides the swept fields.
    threads : int
        Worker processes shared by all sweep points.
    """
    require_valid(scenario)
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    keys, jobs = [], []
    for s, tr, point, budgets, modes in preset_points(name, scenario, trials):
        specs = [SolverSpec(sch, mode) for mode in modes for sch in MODE_SCHEMES[mode]]
        k, j = _jobs(specs, s, tr, point, budgets, timing)
        keys += k
        jobs += j
    rows = make_rows(keys, _map(jobs, threads))
    return ExperimentResult(rows, {"preset": name, "header": preset_header(name, scenario)})


# -- CSV ----------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(result):
    if not result.rows:
        raise EmptyResultError("nothing to emit")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in result.rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def parse_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV", line=1) from None
    if tuple(header) != COLUMNS:
        raise ParseError(f"unexpected header {','.join(header)!r}", line=1)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(COLUMNS):
            raise ParseError(f"expected {len(COLUMNS)} fields, got {len(rec)}", line=lineno)
        try:
            rows.append(Row(int(rec[0]), rec[1], float(rec[2]), int(rec[3]), float(rec[4]), float(rec[5]),
                            float(rec[6]), _parse_bool(rec[7]), int(rec[8]), float(rec[9])))
        except ValueError as err:
            raise ParseError(str(err), line=lineno) from None
    return ExperimentResult(rows)


def _parse_bool(text):
    if text not in ("0", "1"):
        raise ValueError(f"converged must be 0 or 1, got {text!r}")
    return text == "1"


def write_csv(result, path):
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(result))


def read_csv(path):
    with open(path, newline="") as fh:
        return parse_csv(fh.read())
