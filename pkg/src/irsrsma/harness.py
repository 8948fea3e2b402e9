"""Monte Carlo experiment runner: sweeps, resumable records, aggregation and export."""
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from .ao import AOConfig, design_summary
from .baselines import SchemeId, scheme_channels, solve_scheme
from .channels import FadingConfig, SystemGeometry, assemble_channels, realization_rng
from .numerics import dbm_to_watt
from .rates import rate_report, validate_design

logger = logging.getLogger(__name__)

SWEEP_VARIABLES = ("pmax_dbm", "n_elements", "k_users")
RECORDS_FILE = "records.jsonl"
CONFIG_FILE = "config.json"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one sweep.

    ``geometry.lu_pos`` may list more users than ``users``; the first ``users``
    of them are served unless the sweep is over ``k_users``. ``ao.p_max`` is
    ignored when sweeping ``pmax_dbm`` and replaced by ``pmax_dbm`` otherwise
    when that field is set.
    """

    geometry: SystemGeometry = field(default_factory=SystemGeometry)
    fading: FadingConfig = field(default_factory=FadingConfig)
    noise_dbm: float = -80.0
    users: int = 2
    pmax_dbm: float = 20.0
    schemes: tuple = (SchemeId.RSMA,)
    sweep_variable: str = "pmax_dbm"
    sweep_values: tuple = (20.0,)
    realizations: int = 20
    seed: int = 0
    ao: AOConfig = field(default_factory=AOConfig)
    output_path: str = None
    workers: int = 1

    def __post_init__(self):
        self.schemes = tuple(SchemeId.parse(s) for s in self.schemes)
        self.sweep_values = tuple(self.sweep_values)
        self.validate()

    def validate(self):
        if int(self.realizations) < 1:
            raise ConfigError("realizations must be >= 1")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.sweep_variable!r}")
        if not self.sweep_values:
            raise ConfigError("sweep needs at least one value")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        for value in self.sweep_values:
            geom = self.point_geometry(value)
            if any(s.base is SchemeId.NOMA2 for s in self.schemes) and geom.K != 2:
                raise ConfigError(f"noma2 needs K = 2, sweep point {value} has K = {geom.K}")

    def point_geometry(self, value):
        g = self.geometry
        if self.sweep_variable == "n_elements":
            if int(value) != value or value < 0:
                raise ConfigError(f"n_elements must be a non-negative integer, got {value}")
            g = replace(g, N=int(value))
        k = int(value) if self.sweep_variable == "k_users" else int(self.users)
        if self.sweep_variable == "k_users" and int(value) != value:
            raise ConfigError(f"k_users must be an integer, got {value}")
        if not 1 <= k <= len(g.lu_pos):
            raise ConfigError(f"{k} users requested but the geometry places {len(g.lu_pos)}")
        return g.with_users(k)

    def point_ao(self, value):
        dbm = float(value) if self.sweep_variable == "pmax_dbm" else self.pmax_dbm
        if not math.isfinite(dbm):
            raise ConfigError(f"transmit power must be finite, got {dbm} dBm")
        return replace(self.ao, p_max=float(dbm_to_watt(dbm)))

    # -- JSON ------------------------------------------------------------------

    def to_dict(self):
        g = self.geometry
        return {
            "geometry": {
                "ap_pos": list(g.ap_pos), "irs_pos": list(g.irs_pos), "eve_pos": list(g.eve_pos),
                "lu_pos": [list(p) for p in g.lu_pos], "M": g.M, "N": g.N,
            },
            "fading": asdict(self.fading),
            "noise_dbm": self.noise_dbm,
            "users": self.users,
            "pmax_dbm": self.pmax_dbm,
            "schemes": [s.value for s in self.schemes],
            "sweep": {self.sweep_variable: list(self.sweep_values)},
            "realizations": self.realizations,
            "seed": self.seed,
            "ao": asdict(self.ao),
            "output_path": self.output_path,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"geometry", "fading", "noise_dbm", "users", "pmax_dbm", "schemes", "sweep",
                 "realizations", "seed", "ao", "output_path", "workers"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = {}
        try:
            if "geometry" in d:
                geo = dict(d["geometry"])
                geo["lu_pos"] = tuple(tuple(p) for p in geo.get("lu_pos", SystemGeometry.lu_pos))
                kw["geometry"] = SystemGeometry(**geo)
            if "fading" in d:
                kw["fading"] = FadingConfig(**d["fading"])
            if "ao" in d:
                kw["ao"] = AOConfig(**d["ao"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if "sweep" in d:
            sweep = d["sweep"]
            if not isinstance(sweep, dict) or len(sweep) != 1:
                raise ConfigError("sweep must be an object with exactly one of " + ", ".join(SWEEP_VARIABLES))
            (var, values), = sweep.items()
            kw["sweep_variable"] = var
            kw["sweep_values"] = tuple(values)
        for key in ("noise_dbm", "users", "pmax_dbm", "schemes", "realizations", "seed",
                    "output_path", "workers"):
            if key in d:
                kw[key] = d[key]
        try:
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def fingerprint(self):
        """Hash of everything that affects the records (not the output location)."""
        d = self.to_dict()
        d.pop("output_path")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def default_config_path():
    return resources.files("irsrsma") / "scenarios" / "default.json"


def load_default_config(**overrides):
    with resources.as_file(default_config_path()) as path:
        cfg = ExperimentConfig.load(path)
    return replace(cfg, **overrides) if overrides else cfg


# -- running -------------------------------------------------------------------

def cell_key(scheme, value, realization):
    return (SchemeId.parse(scheme).value, float(value), int(realization))


def _record_key(rec):
    return cell_key(rec["scheme"], rec["value"], rec["realization"])


def run_scheme(scheme, channels, ao_config):
    """Solve one scheme on one realization and flatten the outcome into a record."""
    scheme = SchemeId.parse(scheme)
    t0 = time.perf_counter()
    design, trace = solve_scheme(scheme, channels, ao_config)
    elapsed = time.perf_counter() - t0
    ch = scheme_channels(scheme, channels)
    rep = rate_report(design, ch)
    summary = design_summary(design, ch, ao_config.p_max)
    last = trace.records[-1]
    t = trace.objectives
    drop = max([a - b for a, b in zip(t, t[1:])], default=0.0)
    return {
        "status": trace.status,
        "converged": bool(trace.converged),
        "objective": float(trace.objectives[-1]),
        "min_sr": float(rep.min_sr),
        "power_common": summary["power_common"],
        "power_private": summary["power_private"],
        "power_an": summary["power_an"],
        "p_max": float(ao_config.p_max),
        "common_budget": float(rep.R_c_cap - rep.R_c_e),
        "r_c_sec": summary["r_c_sec"],
        "r_p_sec": summary["r_p_sec"],
        "sr": [float(x) for x in rep.sr_k],
        "iterations": int(trace.iterations),
        "max_objective_drop": float(drop),
        "max_violation": float(validate_design(design, ch, ao_config.p_max).max_violation()),
        "rank_ratio_V": float(last.rank_ratio_V),
        "rank_ratio_W": float(max(last.rank_ratio_W)),
        "wall_time": float(elapsed),
        "error": "",
    }


def run_cell(config, value, realization, schemes=None):
    """All requested schemes on one (sweep point, realization) cell.

    Every scheme sees the same channel draw, so comparisons are paired.
    Failures are recorded rather than raised.
    """
    schemes = config.schemes if schemes is None else schemes
    geometry = config.point_geometry(value)
    ao_config = config.point_ao(value)
    channels = assemble_channels(geometry, config.fading, realization_rng(config.seed, realization),
                                 config.noise_dbm)
    out = []
    for scheme in schemes:
        scheme = SchemeId.parse(scheme)
        rec = {"scheme": scheme.value, "variable": config.sweep_variable, "value": float(value),
               "realization": int(realization)}
        try:
            rec.update(run_scheme(scheme, channels, ao_config))
        except Exception as exc:  # a broken cell must not stop the sweep
            logger.exception("cell %s failed", cell_key(scheme, value, realization))
            rec.update(status="error", converged=False, error=f"{type(exc).__name__}: {exc}")
        out.append(rec)
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list = field(default_factory=list)

    def sorted_records(self):
        order = {s.value: i for i, s in enumerate(self.config.schemes)}
        return sorted(self.records, key=lambda r: (order.get(r["scheme"], len(order)), r["value"], r["realization"]))

    @property
    def failed(self):
        return [r for r in self.records if r["status"] == "error"]

    def aggregate(self):
        return aggregate(self.records, self.config)


def _read_records(path):
    records = []
    if not os.path.exists(path):
        return records
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                # a run killed mid-write leaves a truncated last line
                logger.warning("%s:%d: skipping unreadable record", path, line_no)
    return records


def _prepare_output(config):
    out = config.output_path
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    cfg_path = os.path.join(out, CONFIG_FILE)
    stamp = {"fingerprint": config.fingerprint(), "config": config.to_dict()}
    if os.path.exists(cfg_path):
        with open(cfg_path) as fh:
            old = json.load(fh)
        if old.get("fingerprint") != stamp["fingerprint"]:
            raise ConfigError(f"{out} holds records of a different experiment; use another output path")
    else:
        with open(cfg_path, "w") as fh:
            json.dump(stamp, fh, indent=2, sort_keys=True)
    return os.path.join(out, RECORDS_FILE)


def _cell_task(args):
    config, value, realization, schemes = args
    return run_cell(config, value, realization, schemes)


def run_experiment(config, progress=None):
    """Run every (scheme, sweep point, realization) cell of ``config``.

    With ``config.output_path`` set, records are appended to a JSON-lines file
    as cells finish and cells already present there are skipped, so an
    interrupted sweep resumes where it stopped.
    """
    records_path = _prepare_output(config)
    done = {}
    if records_path:
        for rec in _read_records(records_path):
            done[_record_key(rec)] = rec
    tasks = []
    for value in config.sweep_values:
        for r in range(int(config.realizations)):
            todo = [s for s in config.schemes if cell_key(s, value, r) not in done]
            if todo:
                tasks.append((config, value, r, tuple(todo)))
    if done:
        logger.info("resuming: %d records present, %d cells to run", len(done), len(tasks))

    sink = open(records_path, "a") if records_path else None
    try:
        def collect(recs):
            for rec in recs:
                done[_record_key(rec)] = rec
                if sink:
                    sink.write(json.dumps(rec, sort_keys=True) + "\n")
            if sink:
                sink.flush()
            if progress:
                progress(recs)

        if int(config.workers) > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=int(config.workers)) as pool:
                for recs in pool.map(_cell_task, tasks):
                    collect(recs)
        else:
            for task in tasks:
                collect(_cell_task(task))
    finally:
        if sink:
            sink.close()

    wanted = {cell_key(s, v, r) for s in config.schemes for v in config.sweep_values
              for r in range(int(config.realizations))}
    result = ExperimentResult(config, [rec for key, rec in done.items() if key in wanted])
    result.records = result.sorted_records()
    return result


# -- aggregation ---------------------------------------------------------------

AGG_METRICS = ("min_sr", "objective", "power_common", "power_private", "power_an", "iterations")


def aggregate(records, config=None):
    """Mean and sample std of the metrics per (scheme, sweep value).

    Failed cells are counted but left out of the statistics. Per-user rate
    shares are averaged element-wise.
    """
    groups = {}
    for rec in records:
        groups.setdefault((rec["scheme"], rec["variable"], float(rec["value"])), []).append(rec)
    order = {s.value: i for i, s in enumerate(config.schemes)} if config else {}
    rows = []
    for key in sorted(groups, key=lambda k: (order.get(k[0], len(order)), k[0], k[2])):
        recs = sorted(groups[key], key=lambda r: r["realization"])
        ok = [r for r in recs if r["status"] != "error"]
        row = {"scheme": key[0], "variable": key[1], "value": key[2], "n": len(recs),
               "n_failed": len(recs) - len(ok), "n_converged": sum(bool(r["converged"]) for r in ok)}
        for m in AGG_METRICS:
            vals = np.array([r[m] for r in ok], dtype=float)
            row[f"mean_{m}"] = float(vals.mean()) if vals.size else math.nan
            row[f"std_{m}"] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else math.nan)
        for m in ("r_c_sec", "r_p_sec"):
            vals = [r[m] for r in ok]
            row[f"mean_{m}"] = [float(x) for x in np.mean(vals, axis=0)] if vals else []
        rows.append(row)
    return rows


# -- export --------------------------------------------------------------------

RECORD_COLUMNS = ("scheme", "variable", "value", "realization", "status", "converged", "objective",
                  "min_sr", "power_common", "power_private", "power_an", "p_max", "common_budget",
                  "iterations", "max_objective_drop", "max_violation", "rank_ratio_V", "rank_ratio_W",
                  "wall_time", "error")
PER_USER = ("r_c_sec", "r_p_sec", "sr")


def _user_count(records, config):
    if config is not None:
        return max(config.point_geometry(v).K for v in config.sweep_values)
    return max((len(r.get("sr", [])) for r in records), default=0)


def record_columns(n_users):
    return list(RECORD_COLUMNS) + [f"{m}_{k + 1}" for m in PER_USER for k in range(n_users)]


def record_rows(records, n_users):
    """Flatten records to tidy rows with one column per user quantity."""
    rows = []
    for rec in records:
        row = {c: rec.get(c, "") for c in RECORD_COLUMNS}
        for m in PER_USER:
            vals = rec.get(m, [])
            for k in range(n_users):
                row[f"{m}_{k + 1}"] = vals[k] if k < len(vals) else ""
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def write_csv(rows, columns, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])


def export(result, path, fmt="csv"):
    """Write the per-realization table to ``path`` and the summary next to it.

    Returns the list of written paths. The summary file name is ``path`` with
    ``_summary`` inserted before the extension.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    records = result.sorted_records() if isinstance(result, ExperimentResult) else list(result)
    config = result.config if isinstance(result, ExperimentResult) else None
    summary = aggregate(records, config)
    stem, ext = os.path.splitext(str(path))
    summary_path = f"{stem}_summary{ext or '.' + fmt}"
    n_users = _user_count(records, config)
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                write_csv(record_rows(records, n_users), record_columns(n_users), fh)
            cols = ["scheme", "variable", "value", "n", "n_failed", "n_converged"]
            cols += [f"{s}_{m}" for m in AGG_METRICS for s in ("mean", "std")]
            rows = []
            for row in summary:
                flat = {c: row[c] for c in cols}
                rows.append(flat)
            with open(summary_path, "w", newline="") as fh:
                write_csv(rows, cols, fh)
        else:
            with open(path, "w") as fh:
                json.dump(records, fh, indent=1, sort_keys=True)
            with open(summary_path, "w") as fh:
                json.dump(summary, fh, indent=1, sort_keys=True)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return [str(path), summary_path]


def load_records(path):
    """Records written by ``export(..., fmt="json")`` or the JSON-lines sink."""
    try:
        if str(path).endswith(".jsonl"):
            return _read_records(path)
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc


def summary_csv(rows, columns):
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()
