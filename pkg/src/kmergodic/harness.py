"""Scenario loading, deterministic trial execution and the experiment suites.

A scenario is a TOML file; see ``README.md`` for the schema. Every trial is a
pure function of ``(scenario, seed)``: traces are written with ``repr`` floats
so repeated runs produce byte-identical files. Wall-clock timings go to a
separate file because they are not reproducible.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .baselines import MemoryEMMDPlanner, MemoryPolicy, NBVPlanner, TSPPlanner
from .controller import KMEPlanner, PlannerConfig
from .domain import TargetSpec, build_domain, sample_target
from .dynamics import SystemModel, sigma_map, step
from .kernels import KernelSpec
from .metrics import TrajectoryLog, coverage_trace, default_coverage_radius
from .visitation import ErrorState, batch_error, error_init, error_metric, error_step

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIO_DIR = Path(__file__).parent / "scenarios"
OUTPUT_ENV = "KMERGODIC_OUTPUT_DIR"


class ScenarioError(ValueError):
    """Invalid scenario; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class TrialError(RuntimeError):
    def __init__(self, module: str, step_index: int, cause: Exception):
        super().__init__(f"{module} failed at step {step_index}: {cause}")
        self.module = module
        self.step_index = step_index


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

DEFAULTS: dict = {
    "name": "scenario",
    "T": 100,
    "M": 200,
    "seeds": [0],
    "start": "random",
    "coverage_radius": "auto",
    "domain": {"type": "box", "bounds": [[-1.0, 1.0], [-1.0, 1.0]], "path": "",
               "normalize_to": [[-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5]]},
    "target": {"type": "uniform", "components": []},
    "embedding_kernel": {"family": "gaussian", "length_scale": 0.2},
    "objective_kernel": {"family": "gaussian", "length_scale": 0.2},
    "system": {"system": "single_integrator", "u_max": 1.0, "dt": 0.05, "sigma": "identity",
               "constrain_to_domain": False},
    "planner": {"mode": "greedy", "control_weight": 0.0,
                "mpc": {"horizon": 20, "iterations": 20, "step_size": 1.0, "fallback": False}},
    "baseline": "none",
    "outputs": {"trace": True, "trajectory": True, "dump_error_state": False},
    "suite": {"horizons": [30, 60, 100],
              "kernels": {"gaussian": 0.05, "laplace": 0.05, "matern32": 0.05},
              "baselines": ["full", {"short_term": 30}, {"subsampled": {"K": 30, "reseed": True}},
                            "tsp", "nbv"],
              "scaling": {"repeats": 10, "full_cap": 2000, "planners": ["kme", "full", "short_term"],
                          "K": 30}},
}

# keys whose values are free-form tables
_OPAQUE = {"target.components", "baseline", "suite.kernels", "suite.baselines", "suite.horizons",
           "suite.scaling.planners", "seeds", "start", "coverage_radius", "domain.bounds",
           "domain.normalize_to"}


def _leaf_keys(d: dict, prefix: str = "") -> list[str]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in _OPAQUE:
            out.extend(_leaf_keys(v, key + "."))
        else:
            out.append(key)
    return out


VALID_KEYS = sorted(_leaf_keys(DEFAULTS))


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ScenarioError(key, "unknown key")
        if isinstance(base[k], dict) and key not in _OPAQUE:
            if not isinstance(v, dict):
                raise ScenarioError(key, "expected a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str):
    """``a.b.c=value`` with the value parsed as a TOML literal (bare words become strings)."""
    if "=" not in text:
        raise ScenarioError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        key, value = parse_override(text) if isinstance(text, str) else text
        if key not in VALID_KEYS:
            raise ScenarioError(key, "unknown key; valid keys: " + ", ".join(VALID_KEYS))
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return cfg


@dataclass
class Scenario:
    """Validated scenario with its built domain, kernels, model and planner config."""

    config: dict
    source: str = ""
    domain: object = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.config
        try:
            self.T = int(cfg["T"])
        except (TypeError, ValueError):
            raise ScenarioError("T", "must be an integer") from None
        if self.T < 1:
            raise ScenarioError("T", "must be >= 1")
        self.M = int(cfg["M"])
        if self.M < 1:
            raise ScenarioError("M", "must be >= 1")
        seeds = cfg["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ScenarioError("seeds", "must be a nonempty list of integers")
        self.seeds = list(seeds)
        self.name = str(cfg["name"])
        try:
            self.domain = build_domain(cfg["domain"])
        except FileNotFoundError as exc:
            raise ScenarioError("domain.path", str(exc)) from None
        except (ValueError, KeyError) as exc:
            raise ScenarioError("domain", str(exc)) from None
        try:
            self.target_spec = TargetSpec.from_config(cfg["target"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ScenarioError("target", str(exc)) from None
        if self.target_spec.type == "mixture" and self.domain.kind != "box":
            raise ScenarioError("target.type", "mixture targets are supported on box domains only")
        self.embedding_kernel = self._kernel("embedding_kernel")
        self.objective_kernel = self._kernel("objective_kernel")
        try:
            self.model = SystemModel.from_config(cfg["system"], self.domain.dim)
        except ValueError as exc:
            raise ScenarioError("system", str(exc)) from None
        pl = cfg["planner"]
        try:
            mpc = pl.get("mpc", {})
            self.planner_cfg = PlannerConfig(
                mode=pl["mode"],
                horizon=int(mpc.get("horizon", 1)) if pl["mode"] == "mpc" else 1,
                iterations=int(mpc.get("iterations", 20)),
                step_size=float(mpc.get("step_size", 1.0)),
                fallback=bool(mpc.get("fallback", False)),
                embedding_kernel=self.embedding_kernel,
                objective_kernel=self.objective_kernel,
                control_weight=float(pl.get("control_weight", 0.0)),
            )
        except ValueError as exc:
            raise ScenarioError("planner", str(exc)) from None
        self.baseline = _parse_baseline(cfg["baseline"])
        start = cfg["start"]
        if isinstance(start, str):
            if start != "random":
                raise ScenarioError("start", "must be 'random' or a point")
        elif len(start) != self.domain.dim:
            raise ScenarioError("start", f"expected {self.domain.dim} coordinates")
        r = cfg["coverage_radius"]
        if not (r == "auto" or (isinstance(r, (int, float)) and r > 0)):
            raise ScenarioError("coverage_radius", "must be 'auto' or a positive number")

    def _kernel(self, key: str) -> KernelSpec:
        try:
            return KernelSpec.from_config(self.config[key])
        except (ValueError, KeyError, TypeError) as exc:
            raise ScenarioError(key, str(exc)) from None

    @property
    def kernels(self):
        return (self.embedding_kernel, self.objective_kernel)

    def with_overrides(self, overrides) -> "Scenario":
        return Scenario(apply_overrides(self.config, overrides), self.source)

    def digest(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def target(self, seed: int):
        return sample_target(self.domain, self.target_spec, self.M, seed, self.kernels)

    def coverage_radius(self, target) -> float:
        r = self.config["coverage_radius"]
        return default_coverage_radius(target) if r == "auto" else float(r)

    def start_state(self, seed: int) -> np.ndarray:
        start = self.config["start"]
        if isinstance(start, str):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x57A7]))
            p = self.domain.sample_uniform(rng, 1)[0]
        else:
            p = np.asarray(start, dtype=float)
        return self.model.initial_state(p)


def _parse_baseline(spec):
    if spec in (None, "none", "kme"):
        return None
    if spec in ("full", "tsp", "nbv"):
        return {"kind": spec}
    if isinstance(spec, dict) and len(spec) == 1:
        (kind, arg), = spec.items()
        if kind == "short_term":
            if not isinstance(arg, int) or arg < 1:
                raise ScenarioError("baseline.short_term", "K must be a positive integer")
            return {"kind": kind, "K": arg}
        if kind == "subsampled":
            if not isinstance(arg, dict) or not isinstance(arg.get("K"), int) or arg["K"] < 1:
                raise ScenarioError("baseline.subsampled", "needs an integer K >= 1")
            return {"kind": kind, "K": arg["K"], "reseed": bool(arg.get("reseed", True))}
        if kind == "nbv":
            radius = (arg or {}).get("radius") if isinstance(arg, dict) else None
            if radius is not None and not radius > 0:
                raise ScenarioError("baseline.nbv.radius", "must be positive")
            return {"kind": kind, "radius": radius}
    raise ScenarioError("baseline", f"unrecognized baseline {spec!r}")


def resolve_scenario_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / p.name, SCENARIO_DIR / f"{p.name}.toml"):
        if cand.exists():
            return cand
    raise ScenarioError("scenario", f"file not found: {path}")


def load_scenario(path, overrides=()) -> Scenario:
    p = resolve_scenario_path(path)
    try:
        raw = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError("scenario", f"cannot parse {p}: {exc}") from None
    cfg = _merge(DEFAULTS, raw)
    cfg = apply_overrides(cfg, overrides)
    if cfg["domain"].get("type") == "mesh" and not cfg["domain"].get("path"):
        raise ScenarioError("domain.path", "mesh domain needs a path")
    return Scenario(cfg, str(p))


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

@dataclass
class TrialRecord:
    scenario: str
    seed: int
    planner: str
    log: TrajectoryLog
    applied_controls: np.ndarray
    times: np.ndarray
    metric: np.ndarray          # objective-kernel Ẽ after each step
    emmd: np.ndarray            # metric / t^2
    coverage: np.ndarray
    plan_seconds: np.ndarray
    coverage_radius: float
    limit_cycle_steps: list = field(default_factory=list)
    error_rows: list | None = None

    @property
    def T(self) -> int:
        return len(self.times)

    def summary(self) -> dict:
        full = np.flatnonzero(self.coverage >= 1.0)
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "planner": self.planner,
            "T": self.T,
            "final_metric": float(self.metric[-1]),
            "final_emmd": float(self.emmd[-1]),
            "final_coverage": float(self.coverage[-1]),
            "full_coverage_step": int(full[0]) if len(full) else None,
            "coverage_radius": self.coverage_radius,
            "median_plan_seconds": float(np.median(self.plan_seconds)),
            "limit_cycle": bool(self.limit_cycle_steps),
            "limit_cycle_first_step": self.limit_cycle_steps[0] if self.limit_cycle_steps else None,
        }

    def coverage_at(self, step_index: int) -> float:
        return float(self.coverage[min(step_index, self.T - 1)])


def make_planner(scn: Scenario, target, seed: int, radius: float):
    spec = scn.baseline
    cfg = scn.planner_cfg
    if spec is None:
        return KMEPlanner(cfg, scn.model, target, scn.domain)
    kind = spec["kind"]
    if kind in ("full", "short_term", "subsampled"):
        policy = MemoryPolicy(kind, spec.get("K", 0), spec.get("reseed", True))
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xBA5E]))
        mem_cfg = cfg if cfg.mode == "mpc" else cfg.mpc(horizon=1)
        return MemoryEMMDPlanner(policy, mem_cfg, scn.model, target, scn.domain, rng)
    if kind == "tsp":
        return TSPPlanner(scn.model, target, scn.domain)
    if kind == "nbv":
        return NBVPlanner(scn.model, target, scn.domain, spec.get("radius") or radius)
    raise ScenarioError("baseline", f"unknown baseline {kind!r}")


def planner_label(scn: Scenario) -> str:
    spec = scn.baseline
    if spec is None:
        return "kme" if scn.planner_cfg.mode == "greedy" else f"kme_mpc{scn.planner_cfg.horizon}"
    if "K" in spec:
        return f"{spec['kind']}{spec['K']}"
    return spec["kind"]


def _limit_cycles(states: np.ndarray, period: int, tol: float = 1e-3) -> list[int]:
    flagged = []
    for s in range(1, len(states)):
        lo = max(0, s - period)
        if lo < s and np.min(np.linalg.norm(states[lo:s] - states[s], axis=1)) <= tol:
            flagged.append(s)
    return flagged


def run_trial(scn: Scenario, seed: int, dump_error_state: bool = False) -> TrialRecord:
    """Simulate ``T`` steps: plan, record the visited point, step the dynamics."""
    target = scn.target(seed)
    radius = scn.coverage_radius(target)
    model = scn.model
    dt = model.dt
    planner = make_planner(scn, target, seed, radius)
    emb, obj = scn.embedding_kernel, scn.objective_kernel
    same = emb == obj
    e_emb = error_init(target, dt)
    e_obj = e_emb
    x = scn.start_state(seed)
    T = scn.T
    states = np.empty((T, model.state_dim))
    visited = np.empty((T, target.dim))
    controls = np.empty((T, model.control_dim))
    metric = np.empty(T)
    plan_seconds = np.empty(T)
    rows = [] if dump_error_state else None
    ctx = SimpleNamespace(error=e_emb, history=visited[:0], step=0)
    for s in range(T):
        module = "dynamics"
        try:
            w = sigma_map(model, scn.domain, x)
            ctx.error, ctx.history, ctx.step = e_emb, visited[:s], s
            module = "planner"
            t0 = time.perf_counter()
            u = planner.control(x, ctx)
            plan_seconds[s] = time.perf_counter() - t0
            module = "visitation"
            e_emb = error_step(e_emb, target, emb, w)
            e_obj = e_emb if same else error_step(e_obj, target, obj, w)
            module = "dynamics"
            states[s], visited[s], controls[s] = x, w, u
            x = step(model, x, u, scn.domain)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise TrialError(module, s, exc) from exc
        metric[s] = error_metric(e_obj)
        if rows is not None:
            rows.append((e_obj.t, e_obj.e.copy()))
    times = dt * np.arange(1, T + 1)
    log = TrajectoryLog(dt * np.arange(T), states, visited, controls[:-1])
    coverage = coverage_trace(visited, target, radius)
    cycles = []
    if scn.baseline is not None and scn.baseline["kind"] == "short_term":
        cycles = _limit_cycles(states, 4 * scn.baseline["K"])
    return TrialRecord(scn.name, int(seed), planner_label(scn), log, controls, times, metric,
                       metric / times**2, coverage, plan_seconds, float(radius), cycles, rows)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _r(v) -> str:
    return repr(float(v))


def write_trial(record: TrialRecord, out_dir: Path, outputs: dict) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    if outputs.get("trace", True):
        p = out_dir / "trace.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t", "emmd", "time_augmented_metric", "coverage_fraction"])
            for s in range(record.T):
                w.writerow([s, _r(record.times[s]), _r(record.emmd[s]), _r(record.metric[s]),
                            _r(record.coverage[s])])
        paths["trace"] = str(p)
    if outputs.get("trajectory", True):
        p = out_dir / "trajectory.csv"
        n = record.log.states.shape[1]
        d = record.log.domain_points.shape[1]
        m = record.applied_controls.shape[1]
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t"] + [f"x{i}" for i in range(n)] + [f"w{i}" for i in range(d)]
                       + [f"u{i}" for i in range(m)])
            for s in range(record.T):
                w.writerow([s, _r(record.log.times[s])] + [_r(v) for v in record.log.states[s]]
                           + [_r(v) for v in record.log.domain_points[s]]
                           + [_r(v) for v in record.applied_controls[s]])
        paths["trajectory"] = str(p)
    if record.error_rows is not None:
        p = out_dir / "error_state.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            M = len(record.error_rows[0][1]) if record.error_rows else 0
            w.writerow(["t"] + [f"e{i}" for i in range(M)])
            for t, e in record.error_rows:
                w.writerow([_r(t)] + [_r(v) for v in e])
        paths["error_state"] = str(p)
    p = out_dir / "timing.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "plan_seconds"])
        for s, v in enumerate(record.plan_seconds):
            w.writerow([s, _r(v)])
    paths["timing"] = str(p)
    summary = record.summary()
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = str(out_dir / "summary.json")
    return paths


def write_manifest(out_dir: Path, scn: Scenario, seeds, suite: str, extra: dict | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "suite": suite,
        "scenario": scn.name,
        "scenario_source": scn.source,
        "scenario_sha256": scn.digest(),
        "seeds": list(seeds),
        "version": __version__,
        "effective_config": scn.config,
    }
    if extra:
        manifest.update(extra)
    p = out_dir / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return p


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _trial_job(args):
    scn, seed, dump = args
    return run_trial(scn, seed, dump)


def run_trials(scn: Scenario, seeds, workers: int = 1, dump_error_state: bool = False):
    """Independent trials, optionally in a process pool; results ordered by seed list."""
    jobs = [(scn, s, dump_error_state) for s in seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial_job, jobs))


def run_scenario(scn: Scenario, seeds=None, out_root: Path | None = None, suite: str = "run",
                 workers: int = 1, dump_error_state: bool | None = None):
    seeds = list(seeds if seeds is not None else scn.seeds)
    out_root = Path(out_root) if out_root is not None else default_output_dir()
    dump = scn.config["outputs"].get("dump_error_state", False) if dump_error_state is None else dump_error_state
    records = run_trials(scn, seeds, workers, dump)
    base = out_root / suite / scn.name
    for rec in records:
        write_trial(rec, base / str(rec.seed), scn.config["outputs"])
    write_manifest(base, scn, seeds, suite)
    summary = {"scenario": scn.name, "suite": suite, "trials": [r.summary() for r in records]}
    _write_json(base / "summary.json", summary)
    return records, summary


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def run_horizon_suite(scn: Scenario, horizons=None, seeds=None, out_root=None, workers: int = 1,
                      include_greedy: bool = True) -> dict:
    """Final Ẽ/T² per planning horizon (mean over seeds)."""
    horizons = list(horizons if horizons is not None else scn.config["suite"]["horizons"])
    seeds = list(seeds if seeds is not None else scn.seeds)
    out_root = Path(out_root) if out_root is not None else default_output_dir()
    rows = []
    variants = ([("greedy", ["planner.mode=\"greedy\""])] if include_greedy else []) + [
        (f"mpc{h}", ["planner.mode=\"mpc\"", f"planner.mpc.horizon={h}"]) for h in horizons
    ]
    for label, ovr in variants:
        v = scn.with_overrides(ovr + [f'name="{scn.name}_{label}"', 'baseline="none"'])
        records, _ = run_scenario(v, seeds, out_root, "horizon", workers)
        finals = [float(r.emmd[-1]) for r in records]
        rows.append({"planner": label, "horizon": None if label == "greedy" else int(label[3:]),
                     "final_emmd": finals, "mean_final_emmd": float(np.mean(finals))})
    mpc = [r for r in rows if r["horizon"] is not None]
    means = [r["mean_final_emmd"] for r in mpc]
    result = {
        "scenario": scn.name,
        "seeds": seeds,
        "rows": rows,
        "non_increasing": bool(all(b <= a for a, b in zip(means, means[1:]))),
        "improvement_first_to_last": float(1.0 - means[-1] / means[0]) if means and means[0] > 0 else None,
    }
    base = out_root / "horizon" / scn.name
    write_manifest(base, scn, seeds, "horizon", {"horizons": horizons})
    _write_json(base / "suite_summary.json", result)
    return result


def run_kernel_suite(scn: Scenario, families: dict | None = None, seeds=None, out_root=None,
                     workers: int = 1) -> dict:
    """Final coverage per kernel family, each with its own length scale."""
    families = dict(families if families is not None else scn.config["suite"]["kernels"])
    seeds = list(seeds if seeds is not None else scn.seeds[:1])
    out_root = Path(out_root) if out_root is not None else default_output_dir()
    rows = []
    for fam, h in families.items():
        kern = [f'{k}.{leaf}' for k in ("embedding_kernel", "objective_kernel")
                for leaf in (f'family="{fam}"', f"length_scale={float(h)!r}")]
        v = scn.with_overrides(kern + [f'name="{scn.name}_{fam}"', 'baseline="none"'])
        records, _ = run_scenario(v, seeds, out_root, "kernels", workers)
        rows.append({"family": fam, "length_scale": float(h),
                     "final_coverage": [float(r.coverage[-1]) for r in records],
                     "final_emmd": [float(r.emmd[-1]) for r in records]})
    result = {"scenario": scn.name, "seeds": seeds, "rows": rows}
    base = out_root / "kernels" / scn.name
    write_manifest(base, scn, seeds, "kernels", {"families": families})
    _write_json(base / "suite_summary.json", result)
    return result


def _baseline_override(spec) -> str:
    if isinstance(spec, str):
        return f'baseline="{spec}"'
    (kind, arg), = spec.items()
    if isinstance(arg, dict):
        inner = ", ".join(f"{k}={json.dumps(v) if not isinstance(v, bool) else str(v).lower()}"
                          for k, v in arg.items())
        return f"baseline={{{kind}={{{inner}}}}}"
    return f"baseline={{{kind}={arg}}}"


def _baseline_label(spec) -> str:
    if isinstance(spec, str):
        return spec
    (kind, arg), = spec.items()
    k = arg.get("K") if isinstance(arg, dict) else arg
    return f"{kind}{k}" if k is not None else kind


def run_coverage_suite(scn: Scenario, baselines=None, seeds=None, out_root=None, workers: int = 1) -> dict:
    """KME planner against the baselines; coverage compared at KME's first full-coverage step."""
    baselines = list(baselines if baselines is not None else scn.config["suite"]["baselines"])
    seeds = list(seeds if seeds is not None else scn.seeds)
    out_root = Path(out_root) if out_root is not None else default_output_dir()
    kme_scn = scn.with_overrides([f'name="{scn.name}_kme"', 'baseline="none"'])
    kme, _ = run_scenario(kme_scn, seeds, out_root, "coverage", workers)
    per_planner = {"kme": kme}
    for spec in baselines:
        label = _baseline_label(spec)
        v = scn.with_overrides([_baseline_override(spec), f'name="{scn.name}_{label}"'])
        per_planner[label], _ = run_scenario(v, seeds, out_root, "coverage", workers)
    trials = []
    for i, seed in enumerate(seeds):
        k = kme[i]
        full = np.flatnonzero(k.coverage >= 1.0)
        t_star = int(full[0]) if len(full) else None
        row = {"seed": seed, "kme_full_coverage_step": t_star, "coverage_at_kme_full": {},
               "final_emmd": {}, "final_coverage": {}, "full_coverage_step": {}}
        for label, recs in per_planner.items():
            r = recs[i]
            row["coverage_at_kme_full"][label] = r.coverage_at(t_star) if t_star is not None else None
            row["final_emmd"][label] = float(r.emmd[-1])
            row["final_coverage"][label] = float(r.coverage[-1])
            f = np.flatnonzero(r.coverage >= 1.0)
            row["full_coverage_step"][label] = int(f[0]) if len(f) else None
        row["limit_cycle"] = {lab: bool(recs[i].limit_cycle_steps) for lab, recs in per_planner.items()}
        trials.append(row)
    labels = list(per_planner)

    def median_of(key):
        out = {}
        for lab in labels:
            vals = [t[key][lab] for t in trials if t[key][lab] is not None]
            out[lab] = float(np.median(vals)) if vals else None
        return out

    steps = [t["kme_full_coverage_step"] for t in trials]
    result = {
        "scenario": scn.name,
        "seeds": seeds,
        "trials": trials,
        "median_coverage_at_kme_full": median_of("coverage_at_kme_full"),
        "median_final_emmd": median_of("final_emmd"),
        "median_final_coverage": median_of("final_coverage"),
        "kme_full_coverage_steps": steps,
        "median_kme_full_coverage_step": float(np.median(steps)) if all(s is not None for s in steps) else None,
    }
    base = out_root / "coverage" / scn.name
    write_manifest(base, scn, seeds, "coverage", {"baselines": baselines})
    _write_json(base / "suite_summary.json", result)
    return result


# -- scaling -----------------------------------------------------------------

def _timing_state(scn: Scenario, target, T_hist: int, seed: int):
    """A history of length ``T_hist`` and its error state, built from a cheap random walk."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7133]))
    model = scn.model
    x = scn.start_state(seed)
    pts = np.empty((T_hist, target.dim))
    for s in range(T_hist):
        pts[s] = sigma_map(model, scn.domain, x)
        d = rng.normal(size=model.control_dim)
        u = d * (model.u_max / np.linalg.norm(d))
        x = step(model, x, u, scn.domain)
    e = ErrorState(batch_error(pts, target, scn.embedding_kernel, model.dt), model.dt, T_hist)
    return x, pts, e


def planning_call(scn: Scenario, planner_kind: str, T_hist: int, seed: int = 0, K: int = 30):
    """A zero-argument closure running one planning call at history length ``T_hist``."""
    target = scn.target(seed)
    x, pts, e = _timing_state(scn, target, T_hist, seed)
    if planner_kind == "kme":
        spec = None
    elif planner_kind == "full":
        spec = {"kind": "full"}
    elif planner_kind == "short_term":
        spec = {"kind": "short_term", "K": K}
    elif planner_kind == "subsampled":
        spec = {"kind": "subsampled", "K": K, "reseed": True}
    else:
        raise ValueError(f"unknown planner {planner_kind!r}")
    saved = scn.baseline
    scn.baseline = spec
    try:
        planner = make_planner(scn, target, seed, 1.0)
    finally:
        scn.baseline = saved
    ctx = SimpleNamespace(error=e, history=pts, step=T_hist)
    return lambda: planner.control(x, ctx)


def _cpu_seconds(call) -> float:
    t0 = time.process_time()
    call()
    return time.process_time() - t0


def time_calls(calls: dict, repeats: int) -> dict:
    """Median CPU time per closure, timed round-robin.

    Interleaving spreads slow periods of the host over every closure instead
    of one, and CPU time keeps preemption by other processes out.
    """
    for call in calls.values():
        call()  # warm-up
    samples = {k: [] for k in calls}
    for _ in range(repeats):
        for k, call in calls.items():
            samples[k].append(_cpu_seconds(call))
    return {k: float(np.median(v)) for k, v in samples.items()}


def time_planner(scn: Scenario, planner_kind: str, T_hist: int, repeats: int = 10, seed: int = 0,
                 K: int = 30) -> float:
    """Median CPU time of one planning call at history length ``T_hist``."""
    return time_calls({0: planning_call(scn, planner_kind, T_hist, seed, K)}, repeats)[0]


def loglog_slope(xs, ys) -> float:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def crossover(values, kme_times, full_times):
    """Smallest swept value from which KME is faster than full history at every larger value."""
    pairs = [(v, k, f) for v, k, f in zip(values, kme_times, full_times) if f is not None]
    for i, (v, _, _) in enumerate(pairs):
        if all(k < f for _, k, f in pairs[i:]):
            return v
    return None


def run_scaling_suite(scn: Scenario, param: str = "T", values=None, planners=None, repeats=None,
                      out_root=None, seed: int | None = None) -> dict:
    """Median per-step planning time against one swept parameter (T, M or N_h)."""
    sc = scn.config["suite"]["scaling"]
    planners = list(planners if planners is not None else sc["planners"])
    repeats = int(repeats if repeats is not None else sc["repeats"])
    cap = int(sc["full_cap"])
    K = int(sc["K"])
    seed = scn.seeds[0] if seed is None else seed
    if param not in ("T", "M", "N_h"):
        raise ScenarioError("param", "must be one of T, M, N_h")
    if values is None:
        values = {"T": [100, 1000, 10000], "M": [100, 300, 1000], "N_h": [10, 30, 100]}[param]
    values = [int(v) for v in values]
    out_root = Path(out_root) if out_root is not None else default_output_dir()
    base_T = scn.T
    calls = {}
    for v in values:
        ovr = ['planner.mode="mpc"']
        T_hist = base_T
        if param == "T":
            T_hist = v
        elif param == "M":
            ovr.append(f"M={v}")
        else:
            ovr.append(f"planner.mpc.horizon={v}")
        variant = scn.with_overrides(ovr)
        for p in planners:
            if not (p == "full" and T_hist > cap):
                calls[(v, p)] = planning_call(variant, p, T_hist, seed, K)
    times = time_calls(calls, repeats)
    table = [{param: v, **{p: times.get((v, p)) for p in planners}} for v in values]
    result = {"scenario": scn.name, "param": param, "values": values, "repeats": repeats,
              "history_length": base_T if param != "T" else None, "table": table, "slopes": {}}
    for p in planners:
        pts = [(r[param], r[p]) for r in table if r[p] is not None]
        if len(pts) >= 2:
            result["slopes"][p] = loglog_slope(*zip(*pts))
        ts = [r[p] for r in table if r[p] is not None]
        if ts:
            result.setdefault("max_min_ratio", {})[p] = float(max(ts) / min(ts))
    if param == "T" and "kme" in planners and "full" in planners:
        result["crossover"] = crossover(values, [r["kme"] for r in table], [r["full"] for r in table])
    base = out_root / "scaling" / scn.name
    write_manifest(base, scn, [seed], "scaling", {"param": param, "values": values})
    with open(base / f"scaling_{param}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([param] + [f"{p}_seconds" for p in planners])
        for r in table:
            w.writerow([r[param]] + ["" if r[p] is None else repr(r[p]) for p in planners])
    _write_json(base / f"scaling_{param}.json", result)
    return result
