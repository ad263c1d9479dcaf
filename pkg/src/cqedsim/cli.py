"""Command-line experiment runner.

``cqedsim <experiment> --config <path> [--set key=value ...] --out <dir>``

The config file holds one ``key = value`` per line; ``#`` starts a comment.
``--set`` entries override file keys. Each run writes ``<experiment>.csv``
and ``<experiment>.json`` into the output directory.

Exit codes: 0 success, 1 invalid configuration (nothing written),
2 numerical failure (a point raised or missed its cutoff-convergence check;
all rows are still written and the summary lists the failures).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .adiabatic import SWEEP_COLUMNS as ADIABATIC_COLUMNS
from .adiabatic import AdiabaticConfig, sweep_eta_transfer
from .dispersive import DispersiveConfig, dispersive_generator, heating_rate_check, simulate_dispersive
from .perturbation import exchange_fidelity, exchange_heating, gate_fidelity_analytic, gate_heating_analytic
from .raman import SWEEP_COLUMNS as RAMAN_COLUMNS
from .raman import RamanConfig, simulate_exchange, simulate_gate, sweep_eta

log = logging.getLogger("cqedsim")


class ConfigError(ValueError):
    """The configuration cannot be run."""


# --- value parsers ------------------------------------------------------------


def _float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"{text!r} is not a finite number")
    return value


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _float_list(text: str) -> list[float]:
    items = [x.strip() for x in text.replace(";", ",").split(",") if x.strip()]
    return [_float(x) for x in items]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text

    return parse


RAMAN_KEYS = {"omega_r": _float, "nbar": _float, "delta": _float, "n_cavity": _int, "n_motion": _int}
ADIABATIC_KEYS = {
    "omega_r": _float, "omega_max": _float, "pulse_width": _float, "separation": _float,
    "window_start": _float, "window_end": _float, "nbar": _float, "n_cavity": _int, "n_motion": _int,
    "tol": _float,
}
SCHEMAS: dict[str, dict[str, Callable]] = {
    "exchange": {"eta": _float, "omega": _float, "n_init": _int, **RAMAN_KEYS},
    "raman-gate": {"eta": _float, "omega": _float, **RAMAN_KEYS},
    "raman-sweep": {"etas": _float_list, "workers": _int, **RAMAN_KEYS},
    "adiabatic-transfer": {"eta": _float, "alpha": _float, "beta": _float, **ADIABATIC_KEYS},
    "adiabatic-sweep": {"etas": _float_list, "workers": _int, **ADIABATIC_KEYS},
    "dispersive-heating": {
        "g0": _float, "pump": _float, "kappa": _float, "delta": _float, "omega_r": _float, "n_x": _int,
        "scattering": _bool, "state": _choice("ground", "uniform"), "duration": _float, "samples": _int,
    },
}
REQUIRED = {
    "exchange": ("eta",), "raman-gate": ("eta",), "raman-sweep": ("etas",),
    "adiabatic-transfer": ("eta",), "adiabatic-sweep": ("etas",), "dispersive-heating": (),
}


def read_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    raw: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {number}: missing key")
        if key in raw:
            raise ConfigError(f"line {number}: duplicate key {key!r}")
        raw[key] = value
    return raw


def parse_config(experiment: str, raw: dict[str, str]) -> dict:
    """Type-check keys against the experiment's schema."""
    schema = SCHEMAS[experiment]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys for {experiment}: {', '.join(unknown)}")
    params = {}
    for key, text in raw.items():
        try:
            params[key] = schema[key](text)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    missing = [k for k in REQUIRED[experiment] if k not in params]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    if "etas" in params and not params["etas"]:
        raise ConfigError("etas must list at least one value")
    if params.get("workers", 1) < 1:
        raise ConfigError("workers must be at least 1")
    return params


# --- experiment builders --------------------------------------------------------


def _raman_config(params: dict, eta: float) -> RamanConfig:
    keys = ("omega_r", "omega", "nbar", "delta", "n_cavity", "n_motion")
    kw = {k: params[k] for k in keys if k in params}
    if "omega" in kw and "omega_r" not in kw:
        kw["omega_r"] = None
    return RamanConfig(eta, **kw)


def _adiabatic_config(params: dict, eta: float) -> AdiabaticConfig:
    keys = ("omega_r", "omega_max", "pulse_width", "separation", "nbar", "n_cavity", "n_motion", "tol")
    kw = {k: params[k] for k in keys if k in params}
    if "window_start" in params or "window_end" in params:
        base = AdiabaticConfig(max(eta, 1e-3), **kw).window
        kw["window"] = (params.get("window_start", base[0]), params.get("window_end", base[1]))
    return AdiabaticConfig(eta, **kw)


def _validate(experiment: str, params: dict):
    """Construct every module config up front so bad physics exits with code 1."""
    try:
        if experiment in ("exchange", "raman-gate"):
            _raman_config(params, params["eta"])
        elif experiment == "raman-sweep":
            for eta in params["etas"]:
                if not 0 < eta <= 0.6:
                    raise ValueError(f"eta={eta} outside (0, 0.6]")
                _raman_config(params, eta)
        elif experiment == "adiabatic-transfer":
            _adiabatic_config(params, params["eta"])
            a, b = params.get("alpha", 2**-0.5), params.get("beta", 2**-0.5)
            if abs(a * a + b * b - 1) > 1e-9:
                raise ValueError("alpha^2 + beta^2 must be 1")
        elif experiment == "adiabatic-sweep":
            for eta in params["etas"]:
                _adiabatic_config(params, eta)
        elif experiment == "dispersive-heating":
            _dispersive_config(params)
            if params.get("duration", 1.0) <= 0 or params.get("samples", 11) < 2:
                raise ValueError("duration must be positive and samples at least 2")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _mapper(workers: int):
    if workers <= 1:
        return map, None
    pool = ProcessPoolExecutor(max_workers=workers)
    return pool.map, pool


def run_exchange(params):
    cfg = _raman_config(params, params["eta"])
    res = simulate_exchange(cfg, params.get("n_init"))
    p = cfg.exchange_params()
    row = {
        "eta": cfg.eta, "omega": cfg.omega, "nbar": cfg.nbar, "delta": cfg.delta,
        "fidelity_num": res.fidelity, "fidelity_ana": exchange_fidelity(p),
        "delta_n_num": res.delta_n, "delta_n_ana": exchange_heating(p),
        "cutoff_shift": res.cutoff_shift, "converged": res.converged,
    }
    return [row], {}


def run_raman_gate(params):
    cfg = _raman_config(params, params["eta"])
    res = simulate_gate(cfg, strict=False)
    p = cfg.exchange_params()
    n1_ana, n2_ana = gate_heating_analytic(p)
    row = {
        "eta": cfg.eta, "omega": cfg.omega, "nbar": cfg.nbar,
        "F_eg_num": res.fidelity, "F_eg_ana": gate_fidelity_analytic(p),
        "n1_num": res.n1, "n1_ana": n1_ana, "n2_num": res.n2, "n2_ana": n2_ana,
        "leakage": res.leakage, "norm_drift": res.norm_drift,
        "cutoff_shift": res.cutoff_shift, "converged": res.converged,
    }
    return [row], {"truth_table": [[z.real, z.imag] for z in res.truth_table], "dims": list(res.dims)}


def run_raman_sweep(params):
    template = _raman_config(params, params["etas"][0])
    map_fn, pool = _mapper(params.get("workers", 1))
    try:
        rows = sweep_eta(template, params["etas"], map_fn)
    finally:
        if pool:
            pool.shutdown()
    return rows, {}


def run_adiabatic_transfer(params):
    from .adiabatic import cardinal_states, fidelity_for, simulate_transfer

    cfg = _adiabatic_config(params, params["eta"])
    a, b = params.get("alpha", 2**-0.5), params.get("beta", 2**-0.5)
    res = simulate_transfer(cfg, a, b, strict=False)
    row = {"eta": cfg.eta, "alpha": a, "beta": b, **{k: v for k, v in res.summary().items() if k != "transfer_sign"}}
    row["min_cardinal_fidelity"] = min(fidelity_for(res, x, y) for x, y in cardinal_states())
    return [row], {"transfer_sign": res.transfer_sign}


def run_adiabatic_sweep(params):
    template = _adiabatic_config(params, params["etas"][0])
    map_fn, pool = _mapper(params.get("workers", 1))
    try:
        rows = sweep_eta_transfer(template, params["etas"], map_fn)
    finally:
        if pool:
            pool.shutdown()
    return rows, {}


def _dispersive_config(params) -> DispersiveConfig:
    keys = ("g0", "pump", "kappa", "delta", "omega_r", "n_x", "scattering")
    return DispersiveConfig(**{k: params[k] for k in keys if k in params})


def run_dispersive(params):
    cfg = _dispersive_config(params)
    system = dispersive_generator(cfg)
    state = system.ground_state() if params.get("state", "ground") == "ground" else system.plane_wave(0)
    rates = heating_rate_check(system, state)
    finer = dispersive_generator(replace(cfg, n_x=2 * cfg.n_x))
    fine_state = finer.ground_state() if params.get("state", "ground") == "ground" else finer.plane_wave(0)
    fine_rate = heating_rate_check(finer, fine_state)["numeric_rate"]
    shift = abs(fine_rate - rates["numeric_rate"]) / max(abs(fine_rate), 1e-300)
    converged = shift < 1e-3 or (fine_rate == 0 and rates["numeric_rate"] == 0)
    traj = simulate_dispersive(system, state, params.get("duration", 1.0), params.get("samples", 11))
    rows = [
        {"time": t, "x": x, "p": p, "p2": p2, "energy": e, "converged": converged}
        for t, x, p, p2, e in zip(traj.times, traj.x, traj.p, traj.p2, traj.energy)
    ]
    extra = {
        "well_depth": cfg.well_depth, "scattering_rate": cfg.scattering_rate,
        "trap_frequency": cfg.trap_frequency, **rates,
        "grid_doubling_rate_shift": shift, "trace_drift": traj.trace_drift,
    }
    return rows, extra


RUNNERS = {
    "exchange": run_exchange,
    "raman-gate": run_raman_gate,
    "raman-sweep": run_raman_sweep,
    "adiabatic-transfer": run_adiabatic_transfer,
    "adiabatic-sweep": run_adiabatic_sweep,
    "dispersive-heating": run_dispersive,
}
COLUMNS = {
    "raman-sweep": RAMAN_COLUMNS,
    "adiabatic-sweep": ADIABATIC_COLUMNS,
}


# --- output ---------------------------------------------------------------------


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def write_csv(path: Path, rows: list[dict], columns: tuple[str, ...] | None = None):
    cols = list(columns or rows[0].keys())
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in cols])


def run(experiment: str, params: dict, out: Path) -> int:
    """Run one experiment and write its outputs; returns the exit code."""
    start = time.perf_counter()
    status, failure = "ok", None
    try:
        rows, extra = RUNNERS[experiment](params)
    except Exception as exc:  # numerical failure of a single-point run
        log.error("%s failed: %s", experiment, exc)
        rows, extra = [{"error": f"{type(exc).__name__}: {exc}", "converged": False}], {}
        failure = str(exc)
    failures = [
        {"row": i, "eta": r.get("eta"), "reason": r.get("error", "cutoff convergence check failed")}
        for i, r in enumerate(rows)
        if "error" in r or not r.get("converged", True)
    ]
    if failures:
        status = "numerical_failure"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{experiment}.csv", rows, COLUMNS.get(experiment))
    summary = {
        "experiment": experiment,
        "status": status,
        "parameters": params,
        "versions": {
            "cqedsim": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
        },
        "wall_time_s": time.perf_counter() - start,
        "rows": len(rows),
        "converged": not failures,
        "failures": failures,
        "diagnostics": extra,
    }
    if failure:
        summary["error"] = failure
    with open(out / f"{experiment}.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 2 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqedsim", description="Cavity-QED gate and transfer simulations.")
    parser.add_argument("experiment", choices=sorted(SCHEMAS))
    parser.add_argument("--config", type=Path, help="key = value file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = {}
        if args.config is not None:
            try:
                raw = read_config_text(args.config.read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        overrides = read_config_text("\n".join(args.set))
        raw.update(overrides)
        params = parse_config(args.experiment, raw)
        _validate(args.experiment, params)
    except ConfigError as exc:
        print(f"cqedsim: invalid configuration: {exc}", file=sys.stderr)
        return 1
    return run(args.experiment, params, args.out)


if __name__ == "__main__":
    sys.exit(main())
