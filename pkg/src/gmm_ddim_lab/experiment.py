"""Config-driven sweeps over sampler settings with CSV output.

Configs are YAML files whose keys are dotted names (``sampler.eta``);
nested mappings are flattened to the same form. Any key listed in
``SWEEP_AXES`` may hold a list, and the sweep is the cross product of all
list-valued axes.
"""

from __future__ import annotations

import csv
import io
import itertools
import time
import concurrent.futures as cf
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .data import load_component_table, make_distribution, sample
from .denoiser import ExactDenoiser, GuidanceConfig
from .errors import ParameterError
from .kernels import build_kernel_bank
from .metrics import evaluate
from .samplers import SamplerConfig, run_sampler
from .schedule import build_linear_schedule

__all__ = [
    "DEFAULTS",
    "SWEEP_AXES",
    "ExperimentConfig",
    "Cell",
    "load_config",
    "parse_override",
    "expand_cells",
    "run_cell",
    "run_sweep",
    "best_s_rows",
    "emit_summary",
    "write_csv",
    "CSV_HEADER",
    "COLUMNS",
]

CSV_HEADER = "# gmm-ddim-lab v1"

DEFAULTS = {
    "data.name": "ring8",
    "data.dim": 2,
    "data.table": None,
    "schedule.total_steps": 1000,
    "schedule.beta_start": 0.0015,
    "schedule.beta_end": 0.0195,
    "sampler.kind": "ddim",
    "sampler.eta": 0.0,
    "sampler.steps": 10,
    "sampler.chains": 2000,
    "sampler.seed": 0,
    "sampler.record_trajectory": False,
    "kernel.scheme": "gaussian",
    "kernel.components": 8,
    "kernel.scale": 1.0,
    "kernel.share_across_steps": False,
    "kernel.priors": None,
    "guidance.mode": "none",
    "guidance.scale": 0.0,
    "guidance.label": None,
    "metrics.mmd_bandwidth": "median",
    "metrics.swd_projections": 128,
    "metrics.eval_samples": 2000,
    "run.workers": 1,
}

SWEEP_AXES = (
    "sampler.kind",
    "kernel.scheme",
    "sampler.steps",
    "sampler.eta",
    "kernel.components",
    "kernel.scale",
    "kernel.share_across_steps",
    "guidance.mode",
    "guidance.scale",
)

SCHEMES = {"gmm_rand": "rand", "gmm_ortho": "ortho", "gmm_ortho_vub": "ortho_vub"}

COLUMNS = [
    "cell", "method", "steps", "eta", "K", "s", "share", "guidance_mode", "guidance_scale",
    "seed", "mmd2", "sliced_w2", "mean_err", "cov_err", "avg_loglik", "clip_events",
    "wall_time_ms", "status",
]


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_override(text: str) -> tuple[str, object]:
    """Split ``key=value``; the value is parsed as YAML (``[1, 2]``, ``true``)."""
    if "=" not in text:
        raise ParameterError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def axis(self, key) -> list:
        v = self.values[key]
        lst = list(v) if isinstance(v, (list, tuple)) else [v]
        if not lst:
            raise ParameterError(f"sweep list {key} is empty")
        return lst


def load_config(path=None, overrides=(), seed=None) -> ExperimentConfig:
    """Defaults, then the file, then ``--set`` overrides, then ``--seed``."""
    values = dict(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ParameterError(f"{path}: config must be a mapping")
        values.update(_flatten(raw))
    for item in overrides:
        k, v = parse_override(item) if isinstance(item, str) else item
        values[k] = v
    if seed is not None:
        values["sampler.seed"] = int(seed)
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(values)


@dataclass(frozen=True)
class Cell:
    kind: str
    scheme: str | None
    steps: int
    eta: float
    components: int | None
    scale: float | None
    share: bool | None
    guidance_mode: str
    guidance_scale: float | None

    @property
    def method(self) -> str:
        if self.kind == "ddpm":
            return "DDPM"
        if self.kind == "ddim":
            return "DDIM"
        name = "DDIM-GMM-" + self.scheme.upper().replace("_", "-")
        return name + ("*" if self.share else "")


def _normalise(combo, total_steps) -> Cell:
    kind, scheme, steps, eta, K, s, share, gmode, gscale = combo
    if kind not in ("ddpm", "ddim", "ddim_gmm"):
        raise ParameterError(f"unknown sampler.kind {kind!r}")
    if scheme != "gaussian" and scheme not in SCHEMES:
        raise ParameterError(f"unknown kernel.scheme {scheme!r}")
    if kind == "ddim_gmm" and scheme == "gaussian":
        kind = "ddim"
    if kind == "ddpm":
        steps, eta = total_steps, 1.0
    if kind != "ddim_gmm":
        scheme = K = s = share = None
    else:
        scheme, K, s, share = SCHEMES[scheme], int(K), float(s), bool(share)
    if gmode == "none":
        gscale = None
    return Cell(kind, scheme, int(steps), float(eta), K, s, share, gmode, None if gscale is None else float(gscale))


def expand_cells(config: ExperimentConfig) -> tuple[list[Cell], int]:
    """Cross product of the sweep axes with degenerate duplicates removed.

    Returns the cells in declaration order and the number of duplicates
    dropped (e.g. DDIM rows that would differ only in kernel settings).
    """
    T = int(config["schedule.total_steps"])
    seen, cells, dropped = set(), [], 0
    for combo in itertools.product(*(config.axis(k) for k in SWEEP_AXES)):
        cell = _normalise(combo, T)
        if cell in seen:
            dropped += 1
            continue
        seen.add(cell)
        cells.append(cell)
    return cells, dropped


def _distribution(config):
    if config["data.table"]:
        return load_component_table(config["data.table"])
    return make_distribution(config["data.name"], dim=int(config["data.dim"]))


def _cell_seeds(master: int, index: int) -> tuple[int, int, int]:
    ss = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    sampler, bank, metric = (int(v) for v in ss.generate_state(3, np.uint64))
    return sampler, bank, metric


def run_cell(config: ExperimentConfig, cell: Cell, index: int, *, dist=None, reference=None, schedule=None) -> tuple[dict, np.ndarray | None]:
    """Run one cell; failures are captured in the row's ``status``."""
    master = int(config["sampler.seed"])
    dist = dist if dist is not None else _distribution(config)
    schedule = schedule if schedule is not None else build_linear_schedule(
        config["schedule.total_steps"], config["schedule.beta_start"], config["schedule.beta_end"])
    if reference is None:
        reference = sample(dist, int(config["metrics.eval_samples"]), np.random.default_rng([master, 0xDA7A]))
    sampler_seed, bank_seed, metric_seed = _cell_seeds(master, index)
    row = {
        "cell": index, "method": cell.method, "steps": cell.steps, "eta": cell.eta,
        "K": cell.components, "s": cell.scale, "share": cell.share,
        "guidance_mode": cell.guidance_mode, "guidance_scale": cell.guidance_scale,
        "seed": sampler_seed,
    }
    start = time.perf_counter()
    finals = None
    try:
        bank = None
        if cell.kind == "ddim_gmm":
            bank = build_kernel_bank(cell.scheme, cell.steps, cell.share, dist.dim, cell.components,
                                     config["kernel.priors"], cell.scale, bank_seed)
        guidance = GuidanceConfig(cell.guidance_mode, cell.guidance_scale or 0.0, config["guidance.label"])
        sc = SamplerConfig(cell.kind, cell.eta, cell.steps, bank, guidance, bool(config["sampler.record_trajectory"]))
        run = run_sampler(sc, ExactDenoiser(dist, schedule), schedule, int(config["sampler.chains"]), sampler_seed)
        finals = run.finals
        rep = evaluate(finals, reference, dist, rng=metric_seed,
                       bandwidth=config["metrics.mmd_bandwidth"], projections=int(config["metrics.swd_projections"]))
        row.update(mmd2=rep.mmd2, sliced_w2=rep.sliced_w2, mean_err=rep.moment_mean_err,
                   cov_err=rep.moment_cov_err, avg_loglik=rep.avg_loglik, clip_events=run.clip_events, status="ok")
    except Exception as exc:  # recorded per cell; the sweep continues
        row.update(mmd2=None, sliced_w2=None, mean_err=None, cov_err=None, avg_loglik=None,
                   clip_events=None, status=f"error: {type(exc).__name__}: {exc}")
    row["wall_time_ms"] = round(1000.0 * (time.perf_counter() - start), 3)
    return row, finals


def run_sweep(config: ExperimentConfig, cells=None, workers: int | None = None) -> list[dict]:
    """Run every cell; rows come back in cell order whatever the scheduling."""
    if cells is None:
        cells, _ = expand_cells(config)
    dist = _distribution(config)
    schedule = build_linear_schedule(config["schedule.total_steps"], config["schedule.beta_start"], config["schedule.beta_end"])
    reference = sample(dist, int(config["metrics.eval_samples"]), np.random.default_rng([int(config["sampler.seed"]), 0xDA7A]))
    workers = int(workers if workers is not None else config["run.workers"])

    def job(ic):
        i, cell = ic
        return run_cell(config, cell, i, dist=dist, reference=reference, schedule=schedule)[0]

    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(job, enumerate(cells)))
    return [job(ic) for ic in enumerate(cells)]


def best_s_rows(rows: list[dict], metric: str = "mmd2") -> list[dict]:
    """Best row over ``s`` for each (method, steps, eta, K, share, guidance).

    Lower ``metric`` wins; exact ties go to the smaller ``s``.
    """
    groups: dict = {}
    for r in rows:
        if r["status"] != "ok" or r["s"] is None:
            continue
        key = (r["method"], r["steps"], r["eta"], r["K"], r["share"], r["guidance_mode"], r["guidance_scale"])
        groups.setdefault(key, []).append(r)
    out = []
    for members in groups.values():
        out.append(min(members, key=lambda r: (r[metric], r["s"])))
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: list[dict], path, columns=COLUMNS) -> None:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def emit_summary(rows: list[dict], metric: str = "mmd2") -> str:
    """Text table grouped by (steps, eta) with the best row per group flagged.

    Ties go to the row declared first.
    """
    if not rows:
        raise ParameterError("emit_summary needs at least one row")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["steps"], r["eta"]), []).append(r)
    lines = [f"{'best':4} {'method':22} {'steps':>5} {'eta':>5} {'K':>4} {'s':>6} {metric:>12} {'sliced_w2':>12}"]
    for (steps, eta), members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        best = min(ok, key=lambda r: r[metric]) if ok else None
        for r in members:
            mark = "*" if r is best else ""
            val = f"{r[metric]:12.6g}" if r["status"] == "ok" else f"{'failed':>12}"
            sw = f"{r['sliced_w2']:12.6g}" if r["status"] == "ok" else ""
            lines.append(f"{mark:4} {r['method']:22} {steps:5d} {eta:5.2f} {_fmt(r['K']):>4} {_fmt(r['s']):>6} {val} {sw}")
    return "\n".join(lines)
