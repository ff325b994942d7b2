"""Scenario files, experiment runs, weight sweeps and TTS tables."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import yaml

from lanefree.ctm import Profile, Scenario, SimulationTrace, run_open_loop
from lanefree.lq_design import DesignError, WeightConfig, design_gains
from lanefree.model import ModelParams
from lanefree.regulator import run_closed_loop

BUILTIN_SCENARIOS = ("uncongested", "congested")

REPORT_COLUMNS = (
    "scenario",
    "controller",
    "capacity_drop",
    "p1",
    "p2",
    "sigma",
    "activation_step",
    "tts",
    "baseline_tts",
    "improvement_pct",
    "saturation_count",
    "max_relative_density",
    "error",
)

CONTROLLERS = ("none", "lq", "lqi")


class ScenarioError(ValueError):
    """A scenario file could not be parsed or failed validation."""


def _profile(points, field: str) -> Profile:
    try:
        arr = np.asarray(points, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{field}: breakpoints must be [[minute, veh/h], ...]") from exc
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioError(f"{field}: breakpoints must be [[minute, veh/h], ...]")
    try:
        return Profile(tuple(arr[:, 0] / 60.0), tuple(arr[:, 1]))
    except ValueError as exc:
        raise ScenarioError(f"{field}: {exc}") from exc


def _section_map(mapping, n: int, field: str) -> dict:
    out = {}
    for key, val in (mapping or {}).items():
        i = int(key)
        if not 1 <= i <= n:
            raise ScenarioError(f"{field}: section {i} outside 1..{n}")
        out[i - 1] = val
    return out


def scenario_from_dict(doc: dict, capacity_drop: Optional[bool] = None) -> Scenario:
    """Build a validated :class:`Scenario` from the parsed file contents.

    ``capacity_drop`` overrides the file's ``capacity_drop.enabled`` flag.
    """
    try:
        par = dict(doc.get("params", {}))
        drop = dict(doc.get("capacity_drop", {}))
        enabled = drop.get("enabled", False) if capacity_drop is None else capacity_drop
        kwargs = {k: float(par[k]) for k in ("v_f", "w_s", "q_cap", "rho_cr", "rho_max") if k in par}
        kwargs["T_model"] = float(par.get("T_model_s", 10)) / 3600.0
        kwargs["T_control"] = float(par.get("T_control_s", 60)) / 3600.0
        if enabled:
            kwargs["lambda_r"] = float(drop.get("lambda_r", 0.7))
            kwargs["lambda_d"] = float(drop.get("lambda_d", 0.4))
        params = ModelParams(**kwargs)

        sec = doc["sections"]
        n = int(sec["count"])
        length = sec.get("length_km")
        lengths = np.full(n, float(length)) if np.isscalar(length) else np.asarray(length, dtype=float)

        dirs = {}
        for d in ("a", "b"):
            block = doc[f"direction_{d}"]
            beta = np.zeros(n)
            for i, v in _section_map(block.get("offramps"), n, f"direction_{d}.offramps").items():
                beta[i] = float(v)
            ramps = [None] * n
            for i, pts in _section_map(block.get("onramps"), n, f"direction_{d}.onramps").items():
                ramps[i] = _profile(pts, f"direction_{d}.onramps.{i + 1}")
            dirs[d] = dict(
                beta=beta,
                ramps=ramps,
                main=_profile(block["mainstream"], f"direction_{d}.mainstream"),
                rho0=block["initial_density"],
            )
        bounds = doc.get("bounds", {})
        return Scenario(
            lengths=lengths,
            exit_rates_a=dirs["a"]["beta"],
            exit_rates_b=dirs["b"]["beta"],
            onramp_demand_a=dirs["a"]["ramps"],
            onramp_demand_b=dirs["b"]["ramps"],
            mainstream_demand_a=dirs["a"]["main"],
            mainstream_demand_b=dirs["b"]["main"],
            initial_density_a=dirs["a"]["rho0"],
            initial_density_b=dirs["b"]["rho0"],
            eps_min=bounds.get("eps_min", 0.16),
            eps_max=bounds.get("eps_max", 0.84),
            horizon_steps=int(doc["horizon_steps"]),
            params=params,
            name=str(doc.get("name", "")),
        )
    except ScenarioError:
        raise
    except KeyError as exc:
        raise ScenarioError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def _read_scenario_text(path) -> str:
    name = str(path)
    if name in BUILTIN_SCENARIOS:
        return resources.files("lanefree").joinpath("scenarios", f"{name}.yaml").read_text()
    return Path(path).read_text()


def load_scenario(path, capacity_drop: Optional[bool] = None) -> Scenario:
    """Read a YAML scenario file, or one of the built-in names
    ``"uncongested"`` / ``"congested"``."""
    try:
        text = _read_scenario_text(path)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: expected a mapping at top level")
    sc = scenario_from_dict(doc, capacity_drop=capacity_drop)
    if not sc.name:
        sc.name = Path(str(path)).stem
    return sc


def saturation_count(trace: SimulationTrace, scenario: Scenario) -> int:
    """Control-step commands that sit on a sharing-factor bound."""
    cmd = trace.eps_cmd[:: scenario.params.M]
    at_min = np.isclose(cmd, scenario.eps_min, rtol=0, atol=1e-12)
    at_max = np.isclose(cmd, scenario.eps_max, rtol=0, atol=1e-12)
    return int(np.sum(at_min | at_max))


def improvement_pct(tts: float, baseline: float) -> float:
    return 100.0 * (baseline - tts) / baseline if baseline else 0.0


def run_experiment(
    scenario: Scenario,
    controller: str = "none",
    weights: WeightConfig = WeightConfig(),
    capacity_drop: Optional[bool] = None,
    activation_step: int = 0,
    sigma: float = 0.95,
    baseline_tts: Optional[float] = None,
):
    """One run; returns ``(report row, trace)``.

    ``capacity_drop`` switches the plant between ``(lambda_r, lambda_d) =
    (0.7, 0.4)`` and ``(1, 0)``; ``None`` keeps the scenario's setting. The
    no-control baseline is simulated unless ``baseline_tts`` is given.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}, got {controller!r}")
    if capacity_drop is not None and capacity_drop != scenario.params.capacity_drop:
        scenario = scenario.with_params(scenario.params.with_capacity_drop(capacity_drop))
    if controller == "lq":
        weights = WeightConfig(-math.inf, weights.p2)
    if baseline_tts is None:
        baseline_tts = run_open_loop(scenario).tts
    if controller == "none":
        trace = run_open_loop(scenario)
        p1 = p2 = float("nan")
    else:
        gains = design_gains(scenario, weights, sigma=sigma)
        trace = run_closed_loop(scenario, gains, activation_step=activation_step, mode=controller)
        p1, p2 = weights.p1, weights.p2
    tts = trace.tts
    row = {
        "scenario": scenario.name,
        "controller": controller,
        "capacity_drop": scenario.params.capacity_drop,
        "p1": p1,
        "p2": p2,
        "sigma": sigma if controller != "none" else float("nan"),
        "activation_step": activation_step if controller != "none" else 0,
        "tts": tts,
        "baseline_tts": baseline_tts,
        "improvement_pct": improvement_pct(tts, baseline_tts),
        "saturation_count": saturation_count(trace, scenario) if controller != "none" else 0,
        "max_relative_density": trace.max_relative_density(scenario.params.rho_cr),
        "error": "",
    }
    return row, trace


@dataclass(frozen=True)
class SweepSpec:
    """Random weight sweep; the sample set depends only on the seed."""

    count: int = 1000
    p1_range: tuple = (-5.0, 2.0)
    p2_range: tuple = (-5.0, 2.0)
    rng_seed: int = 0
    scenario: str = "uncongested"
    controller: str = "lqi"
    capacity_drop: Optional[bool] = None
    sigma: float = 0.95

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        for name in ("p1_range", "p2_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a non-degenerate interval")
        if self.controller not in ("lq", "lqi"):
            raise ValueError("sweep controller must be 'lq' or 'lqi'")

    def samples(self) -> np.ndarray:
        """``(count, 2)`` array of ``(p1, p2)``; ``p1`` is ``-inf`` for LQ."""
        rng = np.random.default_rng(self.rng_seed)
        p1 = rng.uniform(*self.p1_range, size=self.count)
        p2 = rng.uniform(*self.p2_range, size=self.count)
        if self.controller == "lq":
            p1 = np.full(self.count, -np.inf)
        return np.column_stack([p1, p2])


def _sweep_row(args):
    scenario, controller, p1, p2, sigma, baseline = args
    try:
        row, _ = run_experiment(
            scenario, controller, WeightConfig(p1, p2), sigma=sigma, baseline_tts=baseline
        )
    except (DesignError, np.linalg.LinAlgError) as exc:
        row = {c: float("nan") for c in REPORT_COLUMNS}
        row.update(
            scenario=scenario.name,
            controller=controller,
            capacity_drop=scenario.params.capacity_drop,
            p1=p1,
            p2=p2,
            sigma=sigma,
            activation_step=0,
            baseline_tts=baseline,
            saturation_count=0,
            error=str(exc),
        )
    return row


def run_sweep(spec: SweepSpec, scenario: Optional[Scenario] = None, workers: int = 1) -> list:
    """One report row per sample, in sample order.

    Rows run in ``workers`` processes; the result does not depend on the
    worker count. Design failures are recorded in the row's ``error`` field.
    """
    if scenario is None:
        scenario = load_scenario(spec.scenario)
    if spec.capacity_drop is not None and spec.capacity_drop != scenario.params.capacity_drop:
        scenario = scenario.with_params(scenario.params.with_capacity_drop(spec.capacity_drop))
    baseline = run_open_loop(scenario).tts
    jobs = [(scenario, spec.controller, float(p1), float(p2), spec.sigma, baseline) for p1, p2 in spec.samples()]
    if workers <= 1:
        return [_sweep_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_row, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _fmt(val) -> str:
    if isinstance(val, bool):
        return "1" if val else "0"
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        return f"{float(val):.9g}"
    return str(val)


def write_report(rows: Iterable[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in REPORT_COLUMNS])


def read_report(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = dict(rec)
            for key in ("p1", "p2", "sigma", "tts", "baseline_tts", "improvement_pct", "max_relative_density"):
                row[key] = float(row[key]) if row.get(key) not in (None, "") else float("nan")
            row["capacity_drop"] = row.get("capacity_drop") in ("1", "True", "true")
            row["activation_step"] = int(float(row.get("activation_step") or 0))
            row["saturation_count"] = int(float(row.get("saturation_count") or 0))
            rows.append(row)
    return rows


def _column_label(row) -> str:
    ctrl = row["controller"]
    if ctrl == "none":
        return "No-control"
    p1 = "-inf" if row["p1"] == -math.inf else f"{row['p1']:g}"
    label = f"{ctrl.upper()} ({p1}, {row['p2']:g})"
    if row.get("activation_step"):
        label += f" @k_c={row['activation_step']}"
    return label


def summarize(rows: Iterable[dict]) -> str:
    """TTS table: one line per (scenario, capacity drop), one column per
    controller, each cell ``TTS (improvement %)``."""
    rows = list(rows)
    columns = []
    table: dict = {}
    for row in rows:
        col = _column_label(row)
        if col not in columns:
            columns.append(col)
        drop = "with" if row["capacity_drop"] else "without"
        key = f"{row['scenario']} {drop} capacity drop"
        table.setdefault(key, {})[col] = row
    if "No-control" in columns:
        columns.remove("No-control")
        columns.insert(0, "No-control")
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["Scenario"] + columns)
    for key, cells in table.items():
        line = [key]
        for col in columns:
            row = cells.get(col)
            if row is None or row.get("error"):
                line.append("")
            elif row["controller"] == "none":
                line.append(f"{row['tts']:.1f}")
            else:
                line.append(f"{row['tts']:.1f} ({row['improvement_pct']:.1f})")
        w.writerow(line)
    return buf.getvalue()


def table_matrix(p_lqi=(-2.5, -3.0), p2_lq=-3.0) -> list:
    """No-control, LQI and LQ rows for both built-in scenarios with and
    without capacity drop."""
    rows = []
    for name in BUILTIN_SCENARIOS:
        base = load_scenario(name)
        for drop in (True, False):
            sc = base.with_params(base.params.with_capacity_drop(drop))
            nc, _ = run_experiment(sc, "none")
            rows.append(nc)
            rows.append(run_experiment(sc, "lqi", WeightConfig(*p_lqi), baseline_tts=nc["tts"])[0])
            rows.append(run_experiment(sc, "lq", WeightConfig(-math.inf, p2_lq), baseline_tts=nc["tts"])[0])
    return rows


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))
