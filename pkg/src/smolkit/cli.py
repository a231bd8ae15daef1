"""Scenario runner: flat ``key = value`` configs in, reproducible CSVs out.

A scenario file is UTF-8 text, one ``key = value`` per line, ``#`` comments,
with dotted section prefixes (``kernel.kind = sum``).  Unknown keys are hard
errors naming the key and line; so are type or range violations.  The full
key list is in the README.  The same config with the same seed produces
byte-identical outputs for any worker count.

Commands::

    smolkit run <config> [--workers N] [--out DIR]
    smolkit verify <config> [--workers N] [--out DIR]
    smolkit gelscan <config> [--workers N] [--out DIR]

Exit codes: 0 all monitors pass, 2 a monitor failed, 1 configuration,
hypothesis, or runtime error.  The default output directory is
``$SMOLKIT_OUT/<name>`` (or ``./smolkit-out/<name>``).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (
    BoundReport,
    HypothesisError,
    check_conservation,
    check_gronwall,
    check_heat_majorant,
    check_moment_bound,
    collision_budget,
    gelation_scan,
    second_moment_growth_rate,
)
from .coagulation import TruncationPolicy
from .field import Grid, MassField
from .integrator import HomogeneousState, RunConfig, RunRecord, homogeneous_run, run
from .kernels import DiffusionProfile, Kernel, RangeProfile, kinetic_kernel_from_range
from .tracer import TracerEnsemble, density_consistency, simulate

__all__ = ["Scenario", "ConfigError", "parse_config", "serialize_config", "execute", "main"]

OUT_ENV = "SMOLKIT_OUT"
SERIES_SCHEMA = "# smolkit-series v1"
FIELD_SCHEMA = "# smolkit-field v1"

MODES = ("pde", "homogeneous", "tracer", "verify", "gelscan")
KERNEL_KINDS = ("constant", "sum", "product", "two_exponent", "range_derived", "table")
DIFFUSION_KINDS = ("constant", "power_law", "bracketed_power", "table")
INITIAL_KINDS = ("monodisperse", "gaussian_blob", "table")
MONITORS = ("conservation", "heat_majorant", "gronwall", "moment_plateau")


class ConfigError(ValueError):
    """Malformed scenario file; message carries key path and line."""


@dataclass(frozen=True)
class Scenario:
    """Fully validated description of one smolkit invocation."""

    name: str = ""
    mode: str = ""
    seed: int = 0
    workers: int = 1
    out_dir: str | None = None

    kernel_kind: str = "constant"
    kernel_c: float = 1.0
    kernel_c0: float = 1.0
    kernel_a: float = 1.0
    kernel_b: float = 1.0
    kernel_table: str | None = None
    kernel_range_chi: float = 1.0 / 3.0
    kernel_range_scale: float = 1.0
    kernel_range_dim: int = 3

    diffusion_kind: str = "constant"
    diffusion_value: float = 1.0
    diffusion_r1: float = 1.0
    diffusion_b1: float = 0.0
    diffusion_r2: float = 1.0
    diffusion_b2: float = 0.0
    diffusion_table: str | None = None

    grid_dim: int = 1
    grid_length: float = 1.0
    grid_cells: int = 64

    initial_kind: str = "monodisperse"
    initial_amplitude: float = 1.0
    initial_species: int = 1
    initial_width: float | None = None
    initial_center: tuple[float, ...] | None = None
    initial_table: str | None = None

    n_max: int = 64
    t_final: float = 1.0
    dt: float = 1e-2
    policy: str = "cutoff"
    splitting: str = "strang"
    output_stride: float | None = None
    moments: tuple[float, ...] = (0.0, 1.0, 2.0)
    pair_moments: tuple[float, ...] = ()
    record_fields: bool = False
    track_majorant: bool = False
    auto_halve: bool = True

    tracer_count: int = 10000
    tracer_slices: int = 64
    tracer_times: tuple[float, ...] | None = None
    tracer_immortal: bool = False
    tracer_tv_tolerance: float | None = None
    tracer_z_tolerance: float | None = None

    monitors: tuple[str, ...] = ("conservation",)
    conservation_tolerance: float = 1e-10
    heat_majorant_tolerance: float = 1e-6
    gronwall_c0: float = 1.0
    gronwall_a_bound: float | None = None
    gronwall_delta: float = 1e-3
    plateau_a: float = 2.0
    plateau_tolerance: float = 0.05
    plateau_refinements: int = 1

    gelscan_n_list: tuple[int, ...] = (64, 128, 256)
    gelscan_t_final: float | None = None
    gelscan_initial: float = 1.0
    gelscan_dt: float | None = None


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    raise ValueError(f"expected true or false, got {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _parse_choice(options: tuple[str, ...]):
    def inner(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {s!r}")
        return s

    return inner


def _parse_names(options: tuple[str, ...]):
    def inner(s: str) -> tuple[str, ...]:
        vals = tuple(x.strip() for x in s.split(",") if x.strip())
        for v in vals:
            if v not in options:
                raise ValueError(f"unknown monitor {v!r}; options: {', '.join(options)}")
        return vals

    return inner


def _show(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_show(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key in file -> (Scenario attribute, parser)
SCHEMA: dict[str, tuple[str, object]] = {
    "name": ("name", str),
    "mode": ("mode", _parse_choice(MODES)),
    "seed": ("seed", int),
    "workers": ("workers", int),
    "out.dir": ("out_dir", str),
    "kernel.kind": ("kernel_kind", _parse_choice(KERNEL_KINDS)),
    "kernel.c": ("kernel_c", float),
    "kernel.c0": ("kernel_c0", float),
    "kernel.a": ("kernel_a", float),
    "kernel.b": ("kernel_b", float),
    "kernel.table": ("kernel_table", str),
    "kernel.range_chi": ("kernel_range_chi", float),
    "kernel.range_scale": ("kernel_range_scale", float),
    "kernel.range_dim": ("kernel_range_dim", int),
    "diffusion.kind": ("diffusion_kind", _parse_choice(DIFFUSION_KINDS)),
    "diffusion.value": ("diffusion_value", float),
    "diffusion.r1": ("diffusion_r1", float),
    "diffusion.b1": ("diffusion_b1", float),
    "diffusion.r2": ("diffusion_r2", float),
    "diffusion.b2": ("diffusion_b2", float),
    "diffusion.table": ("diffusion_table", str),
    "grid.dim": ("grid_dim", int),
    "grid.length": ("grid_length", float),
    "grid.cells": ("grid_cells", int),
    "initial.kind": ("initial_kind", _parse_choice(INITIAL_KINDS)),
    "initial.amplitude": ("initial_amplitude", float),
    "initial.species": ("initial_species", int),
    "initial.width": ("initial_width", float),
    "initial.center": ("initial_center", _parse_floats),
    "initial.table": ("initial_table", str),
    "run.n_max": ("n_max", int),
    "run.t_final": ("t_final", float),
    "run.dt": ("dt", float),
    "run.policy": ("policy", _parse_choice(("cutoff", "gel_reservoir"))),
    "run.splitting": ("splitting", _parse_choice(("strang", "lie"))),
    "run.output_stride": ("output_stride", float),
    "run.moments": ("moments", _parse_floats),
    "run.pair_moments": ("pair_moments", _parse_floats),
    "run.record_fields": ("record_fields", _parse_bool),
    "run.track_majorant": ("track_majorant", _parse_bool),
    "run.auto_halve": ("auto_halve", _parse_bool),
    "tracer.count": ("tracer_count", int),
    "tracer.slices": ("tracer_slices", int),
    "tracer.times": ("tracer_times", _parse_floats),
    "tracer.immortal": ("tracer_immortal", _parse_bool),
    "tracer.tv_tolerance": ("tracer_tv_tolerance", float),
    "tracer.z_tolerance": ("tracer_z_tolerance", float),
    "monitors": ("monitors", _parse_names(MONITORS)),
    "conservation.tolerance": ("conservation_tolerance", float),
    "heat_majorant.tolerance": ("heat_majorant_tolerance", float),
    "gronwall.c0": ("gronwall_c0", float),
    "gronwall.a_bound": ("gronwall_a_bound", float),
    "gronwall.delta": ("gronwall_delta", float),
    "moment_plateau.a": ("plateau_a", float),
    "moment_plateau.tolerance": ("plateau_tolerance", float),
    "moment_plateau.refinements": ("plateau_refinements", int),
    "gelscan.n_list": ("gelscan_n_list", _parse_ints),
    "gelscan.t_final": ("gelscan_t_final", float),
    "gelscan.initial": ("gelscan_initial", float),
    "gelscan.dt": ("gelscan_dt", float),
}


def parse_config(path) -> Scenario:
    """Read and fully validate a scenario file."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config: {err}") from err
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        attr, parser = SCHEMA[key]
        try:
            values[attr] = parser(value)
        except (ValueError, TypeError) as err:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {err}") from err
    scenario = Scenario(**values)
    _validate(scenario, path)
    return scenario


def _require(cond: bool, key: str, message: str, path) -> None:
    if not cond:
        raise ConfigError(f"{path}: {key}: {message}")


def _validate(s: Scenario, path) -> None:
    _require(bool(s.name), "name", "scenario name is required", path)
    _require(s.mode in MODES, "mode", f"mode is required (one of {', '.join(MODES)})", path)
    _require(s.seed >= 0, "seed", "must be >= 0", path)
    _require(s.workers >= 1, "workers", "must be >= 1", path)
    _require(s.n_max >= 2, "run.n_max", "must be >= 2", path)
    _require(s.dt > 0, "run.dt", "must be > 0", path)
    _require(s.t_final >= 0, "run.t_final", "must be >= 0", path)
    _require(s.output_stride is None or s.output_stride > 0, "run.output_stride", "must be > 0", path)
    _require(s.initial_amplitude >= 0, "initial.amplitude", "must be >= 0", path)
    _require(1 <= s.initial_species <= s.n_max, "initial.species", "must lie in 1..n_max", path)
    _require(s.grid_dim in (1, 2, 3), "grid.dim", "must be 1, 2 or 3", path)
    _require(s.grid_length > 0, "grid.length", "must be > 0", path)
    m = s.grid_cells
    _require(m >= 2 and (m & (m - 1)) == 0, "grid.cells", "must be a power of two >= 2", path)
    if s.kernel_kind == "table":
        _require(s.kernel_table is not None, "kernel.table", "required for kernel.kind = table", path)
        _require(Path(s.kernel_table).exists(), "kernel.table", f"file not found: {s.kernel_table}", path)
    if s.kernel_kind == "range_derived":
        _require(s.kernel_range_dim >= 3, "kernel.range_dim", "must be >= 3", path)
    if s.diffusion_kind == "table":
        _require(s.diffusion_table is not None, "diffusion.table", "required for diffusion.kind = table", path)
        _require(Path(s.diffusion_table).exists(), "diffusion.table", f"file not found: {s.diffusion_table}", path)
    if s.initial_kind == "table":
        _require(s.initial_table is not None, "initial.table", "required for initial.kind = table", path)
        _require(Path(s.initial_table).exists(), "initial.table", f"file not found: {s.initial_table}", path)
    if s.initial_center is not None:
        _require(len(s.initial_center) == s.grid_dim, "initial.center", "needs one value per grid dimension", path)
    if s.mode == "tracer":
        _require(s.tracer_count >= 1, "tracer.count", "must be >= 1", path)
        _require(s.tracer_slices >= 1, "tracer.slices", "must be >= 1", path)
        _require(s.t_final > 0, "run.t_final", "tracer mode needs a positive horizon", path)
    if s.mode == "gelscan":
        _require(len(s.gelscan_n_list) >= 2, "gelscan.n_list", "needs at least two ranges", path)
        _require(list(s.gelscan_n_list) == sorted(s.gelscan_n_list), "gelscan.n_list", "must increase", path)
    if "gronwall" in s.monitors:
        _require(s.gronwall_delta > 0, "gronwall.delta", "must be > 0", path)
    spatial_only = {"gronwall", "heat_majorant", "moment_plateau"} & set(s.monitors)
    if s.mode == "homogeneous" and spatial_only:
        _require(False, "monitors", f"{sorted(spatial_only)} need a spatial mode (pde/verify/tracer)", path)
    if s.mode == "homogeneous":
        _require(not s.track_majorant, "run.track_majorant", "needs a spatial mode", path)
    _require(s.plateau_refinements >= 1, "moment_plateau.refinements", "must be >= 1", path)


def serialize_config(s: Scenario) -> str:
    """Canonical text form; parse(serialize(s)) reproduces s exactly."""
    lines = [f"# smolkit scenario: {s.name}"]
    for key in sorted(SCHEMA):
        attr, _ = SCHEMA[key]
        value = getattr(s, attr)
        if value is None:
            continue
        lines.append(f"{key} = {_show(value)}")
    return "\n".join(lines) + "\n"


# -- building model objects from a scenario -----------------------------


def build_kernel(s: Scenario) -> Kernel:
    n = s.n_max
    if s.kernel_kind == "constant":
        return Kernel.constant(s.kernel_c, n)
    if s.kernel_kind == "sum":
        return Kernel.sum_kernel(s.kernel_c0, n)
    if s.kernel_kind == "product":
        return Kernel.product(s.kernel_a, n)
    if s.kernel_kind == "two_exponent":
        return Kernel.two_exponent(s.kernel_a, s.kernel_b, n)
    if s.kernel_kind == "range_derived":
        dp = build_diffusion(s)
        rp = RangeProfile(exponent=s.kernel_range_chi, scale=s.kernel_range_scale)
        return kinetic_kernel_from_range(dp, rp, s.kernel_range_dim, s.kernel_c)
    return Kernel.from_csv(s.kernel_table, n)


def build_diffusion(s: Scenario) -> DiffusionProfile:
    n = s.n_max
    if s.diffusion_kind == "constant":
        return DiffusionProfile.constant(s.diffusion_value, n)
    if s.diffusion_kind == "power_law":
        return DiffusionProfile.power_law(s.diffusion_r2, s.diffusion_b2, n)
    if s.diffusion_kind == "bracketed_power":
        return DiffusionProfile.bracketed_power(s.diffusion_r1, s.diffusion_b1, s.diffusion_r2, s.diffusion_b2, n)
    values = np.loadtxt(s.diffusion_table, delimiter=",", ndmin=1)
    return DiffusionProfile.from_table(values[:n])


def build_grid(s: Scenario) -> Grid:
    return Grid(s.grid_dim, s.grid_length, s.grid_cells)


def build_initial_field(s: Scenario, grid: Grid) -> MassField:
    if s.initial_kind == "monodisperse":
        f = MassField.zeros(grid, s.n_max)
        f.data[s.initial_species - 1] = s.initial_amplitude
        return f
    if s.initial_kind == "gaussian_blob":
        return MassField.gaussian_blob(
            grid, s.n_max, amplitude=s.initial_amplitude, width=s.initial_width,
            center=s.initial_center, species=s.initial_species,
        )
    return read_field_csv(s.initial_table, grid, s.n_max)


def build_initial_homogeneous(s: Scenario) -> HomogeneousState:
    if s.initial_kind == "table":
        values = np.loadtxt(s.initial_table, delimiter=",", ndmin=2)
        c = np.zeros(s.n_max)
        for row in values:
            n = int(row[0])
            if not 1 <= n <= s.n_max:
                raise ConfigError(f"initial.table: species {n} outside 1..{s.n_max}")
            c[n - 1] = row[1]
        return HomogeneousState(c)
    c = np.zeros(s.n_max)
    c[s.initial_species - 1] = s.initial_amplitude
    return HomogeneousState(c)


def build_run_config(s: Scenario, **overrides) -> RunConfig:
    policy = TruncationPolicy(s.policy, s.n_max)
    base = dict(
        t_final=s.t_final,
        dt=s.dt,
        policy=policy,
        splitting=s.splitting,
        output_stride=s.output_stride,
        seed=s.seed,
        moment_exponents=tuple(s.moments),
        pair_moment_exponents=tuple(s.pair_moments),
        record_fields=s.record_fields,
        track_majorant=s.track_majorant,
        auto_halve=s.auto_halve,
        workers=s.workers,
    )
    base.update(overrides)
    return RunConfig(**base)


# -- output files --------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series_csv(path: Path, rec: RunRecord, extra: dict[str, list[float]] | None = None) -> None:
    moment_cols = sorted(rec.moments)
    headers = ["t", "I", "I_plus_gel", "gel"] + [f"X{a:g}" for a in moment_cols] + ["dt"]
    for a in sorted(rec.pair_moments):
        headers.append(f"Y{a:g}")
    for a in sorted(rec.pair_moments_weighted):
        headers.append(f"Yk{a:g}")
    extra = extra or {}
    headers += list(extra)
    rows = []
    for i, t in enumerate(rec.times):
        row = [t, rec.mass[i], rec.mass[i] + rec.gel[i], rec.gel[i]]
        row += [rec.moments[a][i] for a in moment_cols]
        row.append(rec.dt_series[i])
        row += [rec.pair_moments[a][i] for a in sorted(rec.pair_moments)]
        row += [rec.pair_moments_weighted[a][i] for a in sorted(rec.pair_moments_weighted)]
        row += [extra[name][i] for name in extra]
        rows.append(",".join(_fmt(v) for v in row))
    text = SERIES_SCHEMA + "\n" + ",".join(headers) + "\n" + "\n".join(rows) + "\n"
    path.write_text(text, encoding="utf-8")


def write_field_csv(path: Path, flat: np.ndarray, grid: Grid | None, t: float, gel: float) -> None:
    meta = f"{FIELD_SCHEMA} t={_fmt(t)} gel={_fmt(gel)}"
    if grid is not None:
        meta += f" dim={grid.dim} cells={grid.cells_per_side} length={_fmt(grid.length)}"
    lines = [meta]
    for n in range(flat.shape[0]):
        lines.append(str(n + 1) + "," + ",".join(_fmt(v) for v in np.atleast_1d(flat[n])))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_field_csv(path, grid: Grid, n_max: int) -> MassField:
    """Load a dense per-mass snapshot (rows ``n,v1,v2,...``) as a field."""
    data = np.zeros((n_max, grid.n_cells))
    gel = 0.0
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line.split():
                    if tok.startswith("gel="):
                        gel = float(tok[4:])
                continue
            parts = line.split(",")
            n = int(parts[0])
            if not 1 <= n <= n_max:
                raise ConfigError(f"{path}: species {n} outside 1..{n_max}")
            vals = np.array([float(v) for v in parts[1:]])
            if vals.size != grid.n_cells:
                raise ConfigError(f"{path}: row for species {n} has {vals.size} cells, expected {grid.n_cells}")
            data[n - 1] = vals
    return MassField(grid, data.reshape((n_max,) + grid.shape), gel_reservoir=gel)


# -- execution -----------------------------------------------------------


def _out_dir(s: Scenario, override: str | None) -> Path:
    if override is not None:
        out = Path(override)
    elif s.out_dir is not None:
        out = Path(s.out_dir)
    else:
        out = Path(os.environ.get(OUT_ENV, "smolkit-out")) / s.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _conservation_column(rec: RunRecord) -> list[float]:
    total = rec.mass_with_gel if rec.policy.kind == "gel_reservoir" else np.asarray(rec.mass)
    ref = total[0] if total[0] else 1.0
    return [abs(v - total[0]) / abs(ref) for v in total]


def _majorant_column(rec: RunRecord, dp: DiffusionProfile) -> list[float]:
    d1p = dp.value(1) ** (rec.grid.dim / 2.0)
    col = []
    for xh, u in zip(rec.weighted_mass_moment, rec.majorant):
        denom = d1p * u
        mask = denom > 1e-9 * denom.max() if denom.size else denom > 0
        col.append(float((xh[mask] / denom[mask]).max()) if mask.any() else 0.0)
    return col


def execute(s: Scenario, out_override: str | None = None, workers_override: int | None = None) -> int:
    """Run one scenario end to end; returns the process exit code."""
    if workers_override is not None:
        s = dataclasses.replace(s, workers=workers_override)
    out = _out_dir(s, out_override)
    reports = []
    lines = [f"scenario {s.name} (mode={s.mode})"]

    if s.mode == "gelscan":
        kernel = build_kernel(dataclasses.replace(s, n_max=max(s.gelscan_n_list)))
        verdict = gelation_scan(
            kernel,
            list(s.gelscan_n_list),
            s.gelscan_t_final if s.gelscan_t_final is not None else s.t_final,
            initial=s.gelscan_initial,
            dt=s.gelscan_dt,
        )
        rows = [",".join(["n_max", "mass_ratio", "gel"])]
        rows += [
            f"{n},{_fmt(r)},{_fmt(g)}"
            for n, r, g in zip(verdict.n_values, verdict.mass_ratios, verdict.gel_values)
        ]
        (out / "gelscan.csv").write_text(SERIES_SCHEMA + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
        lines.append(str(verdict))
        report = "\n".join(lines) + "\n"
        (out / "report.txt").write_text(report, encoding="utf-8")
        sys.stdout.write(report)
        return 0

    kernel = build_kernel(s)
    if s.mode == "homogeneous":
        cfg = build_run_config(s)
        rec = homogeneous_run(build_initial_homogeneous(s), kernel, cfg)
        dp = None
    else:
        # pde, tracer and verify share the spatial run.
        dp = build_diffusion(s)
        grid = build_grid(s)
        field0 = build_initial_field(s, grid)
        need_fields = s.record_fields or s.mode == "tracer" or "gronwall" in s.monitors
        need_majorant = s.track_majorant or "heat_majorant" in s.monitors
        overrides: dict = {}
        if "moment_plateau" in s.monitors:
            overrides["moment_exponents"] = tuple(sorted(set(s.moments) | {s.plateau_a}))
            overrides["pair_moment_exponents"] = tuple(sorted(set(s.pair_moments) | {s.plateau_a - 1}))
        if s.mode == "tracer":
            # dt must divide the slice width so strides land exactly on
            # slice boundaries.
            slice_dt = s.t_final / s.tracer_slices
            overrides["output_stride"] = slice_dt
            overrides["dt"] = slice_dt / max(1, int(np.ceil(slice_dt / s.dt)))
        cfg = build_run_config(s, record_fields=need_fields, track_majorant=need_majorant, **overrides)
        rec = run(field0, kernel, dp, cfg)

    extra = {"cons_drift": _conservation_column(rec)}
    if rec.majorant is not None:
        extra["majorant_ratio"] = _majorant_column(rec, dp)
    write_series_csv(out / "series.csv", rec, extra)
    if rec.fields is not None:
        snapdir = out / "snapshots"
        snapdir.mkdir(exist_ok=True)
        for i, t in enumerate(rec.times):
            write_field_csv(snapdir / f"snapshot_{i:04d}.csv", rec.fields[i], rec.grid, t, rec.gel[i])

    reports.append(check_conservation(rec, s.conservation_tolerance))
    if 0.0 in rec.moments:
        reports.append(collision_budget(rec))
    if "heat_majorant" in s.monitors or rec.majorant is not None:
        reports.append(check_heat_majorant(rec, dp, s.heat_majorant_tolerance))
    if "gronwall" in s.monitors:
        perturbed = MassField(grid, field0.data * (1.0 + s.gronwall_delta), field0.gel_reservoir)
        rec_g = run(perturbed, kernel, dp, cfg)
        reports.append(check_gronwall(rec, rec_g, s.gronwall_c0, s.gronwall_a_bound))
    if "moment_plateau" in s.monitors:
        recs = [rec]
        for level in range(1, s.plateau_refinements + 1):
            s2 = dataclasses.replace(s, n_max=s.n_max * 2**level)
            k2 = build_kernel(s2)
            dp2 = build_diffusion(s2)
            f2 = build_initial_field(s2, grid)
            cfg2 = build_run_config(
                s2,
                record_fields=False,
                track_majorant=False,
                moment_exponents=cfg.moment_exponents,
                pair_moment_exponents=cfg.pair_moment_exponents,
            )
            recs.append(run(f2, k2, dp2, cfg2))
        reports.append(check_moment_bound(recs, s.plateau_a, dp, tolerance=s.plateau_tolerance))

    if s.mode == "tracer":
        slice_dt = s.t_final / s.tracer_slices
        fields = [
            MassField(rec.grid, f.reshape((s.n_max,) + rec.grid.shape), validate=False)
            for f in rec.fields
        ]
        ens = TracerEnsemble(count=s.tracer_count, seed=s.seed, immortal=s.tracer_immortal)
        times = list(s.tracer_times) if s.tracer_times is not None else [s.t_final]
        result = simulate(fields[:-1], kernel, dp, ens, slice_dt, histogram_times=times, workers=s.workers)
        m0 = float(sum(fields[0].species_integrals()))
        hist_rows = ["time,mass,cell,count"]
        summary_rows = [
            "time,tv,max_abs_z,n_z_bins,z_q50,z_q90,z_q99,overflow_fraction,cemetery_empirical,cemetery_model"
        ]
        for hist in result.histograms:
            stride_index = int(round(hist.time / slice_dt))
            rep = density_consistency(hist, fields[stride_index], m0)
            for (mi, ci) in np.argwhere(hist.counts):
                hist_rows.append(f"{_fmt(hist.time)},{mi + 1},{ci},{hist.counts[mi, ci]}")
            for ci in np.flatnonzero(hist.overflow):
                hist_rows.append(f"{_fmt(hist.time)},{s.n_max + 1},{ci},{hist.overflow[ci]}")
            if hist.cemetery:
                hist_rows.append(f"{_fmt(hist.time)},0,-1,{hist.cemetery}")
            q = rep.z_quantiles
            summary_rows.append(
                ",".join(
                    [_fmt(hist.time), _fmt(rep.tv_distance), _fmt(rep.max_abs_z), str(rep.n_z_bins)]
                    + [_fmt(q.get(name, 0.0)) for name in ("q50", "q90", "q99")]
                    + [_fmt(rep.overflow_fraction), _fmt(rep.cemetery_empirical), _fmt(rep.cemetery_model)]
                )
            )
            lines.append(
                f"tracer t={hist.time:g}: TV={rep.tv_distance:.4f}, max|z|={rep.max_abs_z:.2f} over {rep.n_z_bins} bins"
            )
            if s.tracer_tv_tolerance is not None:
                reports.append(
                    BoundReport(
                        name="tracer_tv",
                        max_violation=rep.tv_distance,
                        tolerance=s.tracer_tv_tolerance,
                        passed=rep.tv_distance <= s.tracer_tv_tolerance,
                    )
                )
            if s.tracer_z_tolerance is not None:
                reports.append(
                    BoundReport(
                        name="tracer_z",
                        max_violation=rep.max_abs_z,
                        tolerance=s.tracer_z_tolerance,
                        passed=rep.max_abs_z <= s.tracer_z_tolerance,
                    )
                )
        (out / "histogram.csv").write_text("\n".join(hist_rows) + "\n", encoding="utf-8")
        (out / "summary.csv").write_text("\n".join(summary_rows) + "\n", encoding="utf-8")
        counts = result.collision_counts
        mean_coll = float((np.arange(counts.size) * counts).sum()) / s.tracer_count
        lines.append(
            f"tracer collisions per trajectory: mean {mean_coll:.3f}, max {counts.size - 1}"
            + (" (immortal: counts are descriptive only)" if s.tracer_immortal else "")
        )

    lines += [str(r) for r in reports]
    if 2.0 in rec.moments and all(v > 0 for v in rec.moments[2.0]):
        slope = second_moment_growth_rate(rec)
        lines.append(f"second-moment growth slope (diagnostic, not gated): {slope:.4g}")
    for event in rec.events:
        lines.append(f"note: {event}")
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return 0 if all(r.passed for r in reports) else 2


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="smolkit", description="coagulation-diffusion scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify", "gelscan"):
        p = sub.add_parser(name)
        p.add_argument("config", help="scenario file")
        p.add_argument("--workers", type=int, default=None, help="parallelism cap (results unchanged)")
        p.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        scenario = parse_config(args.config)
        if args.command == "gelscan":
            scenario = dataclasses.replace(scenario, mode="gelscan")
        return execute(scenario, out_override=args.out, workers_override=args.workers)
    except (ConfigError, HypothesisError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FloatingPointError, RuntimeError, OSError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
