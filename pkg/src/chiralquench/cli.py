"""Command-line front end.

Usage::

    chiralquench COMMAND [--config FILE] [--out DIR] [--seed N]
                 [--noise on|off] [--threads N] [--set key=value ...]

Commands: polarization, bis, winding, charges, transition, phase-diagram.

The config file is flat ``section.key = value`` text (``#`` comments).
Unknown keys are errors. ``--set`` entries override the file, and the
dedicated flags override both. Exit codes: 0 ok, 2 config error, 3
numerical failure. Every run writes ``manifest.json`` listing the output
files with their sha256.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import bismesh as bm
from . import charges as ch
from . import invariants as inv
from . import noise as nz
from .dynamics import (
    N_SAMPLES,
    QuenchSpec,
    WindowedAverager,
    polarization_series,
    t_max,
    time_avg_polarization,
    window_times,
)
from .model import PHASE_BOUNDARIES, GapClosedError, ModelParams, equilibrium_winding

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _float(v):
    v = v.strip().lower()
    if v in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def _bool(v):
    v = v.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {v!r}")


def _floats(v):
    return tuple(float(x) for x in v.replace(",", " ").split())


def _str(v):
    return v.strip()


#: key -> (parser, default)
SCHEMA = {
    "model.m_z": (float, 1.4),
    "model.t_0": (float, 1.0),
    "model.t_so": (float, 1.0),
    "model.h_4": (float, 0.0),
    "quench.axis": (int, 0),
    "quench.m_i": (_float, math.inf),
    "mesh.level": (int, 5),
    "mesh.source": (_str, "exact"),
    "mesh.grid_step_pi": (float, 0.1),
    "mesh.smooth": (float, 0.0),
    "mesh.probe_step_pi": (float, 0.02),
    "noise.enabled": (_bool, False),
    "noise.n_min": (float, 1000.0),
    "noise.n_max": (float, 2000.0),
    "noise.repetitions": (int, 10000),
    "noise.trials": (int, 100),
    "noise.n_time": (int, N_SAMPLES),
    "noise.mode": (_str, "normal"),
    "noise.calibration_noise": (_bool, True),
    "polarization.k_pi": (_floats, (0.1, 0.6, 0.1)),
    "polarization.t_start": (float, 0.0),
    "polarization.t_end": (_float, math.nan),  # nan: t_max
    "polarization.n_times": (int, N_SAMPLES),
    "charges.region": (_str, "bz"),
    "charges.segments": (_str, "O1-O8 O3-O6"),
    "charges.m_values": (_floats, (6.0, 1.2, 25.0)),
    "transition.m_min": (float, 1.0),
    "transition.m_max": (float, 6.0),
    "transition.noisy_m": (_floats, (2.2, 3.2, 11.0)),
    "phase.m_min": (float, -4.0),
    "phase.m_max": (float, 4.0),
    "phase.step": (float, 0.2),
    "phase.level": (int, 3),
    "run.seed": (int, 0),
    "run.out": (_str, "out"),
    "run.threads": (int, 1),
}


def parse_config_text(text: str) -> dict:
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def from_raw(cls, raw: dict) -> "RunConfig":
        vals = {k: d for k, (_, d) in SCHEMA.items()}
        for key, text in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            parser, _ = SCHEMA[key]
            try:
                vals[key] = parser(text)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        try:
            self.model()
            self.quench()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        v = self.values
        checks = [
            (v["mesh.level"] >= 0, "mesh.level must be >= 0"),
            (v["mesh.source"] in ("exact", "grid"), "mesh.source must be exact or grid"),
            (v["mesh.grid_step_pi"] > 0, "mesh.grid_step_pi must be positive"),
            (abs(round(1 / v["mesh.grid_step_pi"]) * v["mesh.grid_step_pi"] - 1) < 1e-9,
             "mesh.grid_step_pi must divide 1"),
            (v["mesh.smooth"] >= 0, "mesh.smooth must be >= 0"),
            (v["mesh.probe_step_pi"] > 0, "mesh.probe_step_pi must be positive"),
            (0 < v["noise.n_min"] <= v["noise.n_max"], "need 0 < noise.n_min <= noise.n_max"),
            (v["noise.repetitions"] >= 1, "noise.repetitions must be >= 1"),
            (v["noise.trials"] >= 1, "noise.trials must be >= 1"),
            (v["noise.n_time"] >= 2, "noise.n_time must be >= 2"),
            (v["noise.mode"] in ("normal", "poisson"), "noise.mode must be normal or poisson"),
            (len(v["polarization.k_pi"]) == 3, "polarization.k_pi needs three numbers"),
            (v["polarization.n_times"] >= 2, "polarization.n_times must be >= 2"),
            (v["charges.region"] in ch.REGIONS, f"charges.region must be one of {sorted(ch.REGIONS)}"),
            (len(v["charges.m_values"]) == 3, "charges.m_values is 'start stop count'"),
            (0 < v["transition.m_min"] < v["transition.m_max"], "need 0 < transition.m_min < transition.m_max"),
            (len(v["transition.noisy_m"]) == 3, "transition.noisy_m is 'start stop count'"),
            (v["phase.step"] > 0 and v["phase.m_min"] < v["phase.m_max"], "bad phase sweep range"),
            (v["run.threads"] >= 1, "run.threads must be >= 1"),
            (v["run.seed"] >= 0, "run.seed must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for seg in v["charges.segments"].split():
            a, _, b = seg.partition("-")
            if a not in ch.LABELS or b not in ch.LABELS:
                raise ConfigError(f"charges.segments: unknown segment {seg!r}")
        t_end = v["polarization.t_end"]
        if not math.isnan(t_end) and not t_end > v["polarization.t_start"]:
            raise ConfigError("polarization time range is empty")

    def model(self) -> ModelParams:
        v = self.values
        return ModelParams(v["model.m_z"], v["model.t_0"], v["model.t_so"], v["model.h_4"])

    def quench(self) -> QuenchSpec:
        return QuenchSpec(self.values["quench.axis"], self.values["quench.m_i"])

    def mesh_settings(self, level=None) -> bm.MeshSettings:
        v = self.values
        return bm.MeshSettings(
            levels=v["mesh.level"] if level is None else level,
            source=v["mesh.source"],
            grid_step=v["mesh.grid_step_pi"] * np.pi,
            smooth_width=v["mesh.smooth"],
        )

    @property
    def probe_step(self) -> float:
        return self.values["mesh.probe_step_pi"] * np.pi

    def calibration(self, rng) -> nz.PhotonCalibration:
        v = self.values
        return nz.PhotonCalibration.draw(rng, (v["noise.n_min"], v["noise.n_max"]), v["noise.repetitions"])

    def echo(self) -> dict:
        out = {}
        for k, v in sorted(self.values.items()):
            if isinstance(v, float) and not math.isfinite(v):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def load_config(path=None, overrides=()) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, val = item.split("=", 1)
        raw[k.strip()] = val.strip()
    return RunConfig.from_raw(raw)


# --------------------------------------------------------------------------
# output handling
# --------------------------------------------------------------------------


class Outputs:
    """Collects files in a staging directory; committed only on success."""

    def __init__(self, out_dir: Path, command: str):
        self.out_dir = Path(out_dir)
        self.stage = self.out_dir / f".partial-{command}"
        if self.stage.exists():
            shutil.rmtree(self.stage)
        self.stage.mkdir(parents=True)
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.stage / name

    def json(self, name: str, payload) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(payload, indent=1, sort_keys=True, default=_jsonable) + "\n")
        return p

    def csv(self, name: str, header: list[str], rows) -> Path:
        p = self.path(name)
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(x) for x in row))
        p.write_text("\n".join(lines) + "\n")
        return p

    def commit(self, manifest: dict) -> list[Path]:
        files = {}
        for name in self.names:
            files[name] = hashlib.sha256((self.stage / name).read_bytes()).hexdigest()
        manifest["files"] = files
        (self.stage / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        moved = []
        for name in self.names + ["manifest.json"]:
            dest = self.out_dir / name
            shutil.move(str(self.stage / name), dest)
            moved.append(dest)
        shutil.rmtree(self.stage)
        return moved

    def abort(self):
        shutil.rmtree(self.stage, ignore_errors=True)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _finite(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def _versions() -> dict:
    import scipy

    try:
        import numba

        nb = numba.__version__
    except ImportError:
        nb = None
    return {
        "chiralquench": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": nb,
    }


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _linspace3(spec):
    a, b, n = spec
    n = int(n)
    if n < 2:
        raise ConfigError("need at least two points in a sweep")
    return np.linspace(a, b, n)


def _noisy_winding_pipeline(cfg: RunConfig, p: ModelParams, cal, level: int):
    def pipeline(rng):
        av = nz.NoisyAverager(cal, rng, cfg["noise.n_time"], cfg["noise.mode"], cfg["noise.calibration_noise"])
        mesh = bm.reconstruct_bis(p, QuenchSpec(0), cfg.mesh_settings(level), averager=av)
        tex = inv.g_field(mesh, p, cfg.probe_step, averager=av)
        return inv.winding_W(mesh, tex).value

    return pipeline


def cmd_polarization(cfg: RunConfig, out: Outputs, rng) -> dict:
    p, q = cfg.model(), cfg.quench()
    k = np.array(cfg["polarization.k_pi"]) * np.pi
    t_end = cfg["polarization.t_end"]
    if math.isnan(t_end):
        t_end = t_max(p)
    times = window_times((cfg["polarization.t_start"], t_end), cfg["polarization.n_times"])
    series = polarization_series(k, p, q, times)
    header = ["t[1/t0]"] + [f"gamma{j}_exact[1]" for j in range(5)]
    cols = [times] + [series[:, j] for j in range(5)]
    summary = {
        "k[rad]": k.tolist(),
        "window[1/t0]": [float(times[0]), float(times[-1])],
        "series_mean[1]": series.mean(axis=0).tolist(),
        "infinite_time_average[1]": time_avg_polarization(k, p, q).tolist(),
    }
    try:
        tm = t_max(p)
        early = WindowedAverager.early(p)(k[None, :], p, q)[0]
        late = WindowedAverager.dephased(p)(k[None, :], p, q)[0]
        summary["t_max[1/t0]"] = tm
        summary["window_0_tmax[1]"] = early.tolist()
        summary["window_2tmax_3tmax_damped[1]"] = late.tolist()
        summary["window_max_abs_difference[1]"] = float(np.max(np.abs(early - late)))
    except ValueError:
        pass
    if cfg["noise.enabled"]:
        cal = cfg.calibration(rng)
        em = nz.ReadoutEmulator(cal, cfg["noise.n_time"], cfg["noise.mode"], cfg["noise.calibration_noise"])
        for j in range(5):
            vals, _ = em.series(k, p, q, times, rng, j)
            header.append(f"gamma{j}_noisy[1]")
            cols.append(vals)
        summary["calibration_N[photons]"] = list(cal.N)
        summary["noisy_series_mean[1]"] = [float(np.mean(c)) for c in cols[6:]]
    out.csv("series.csv", header, zip(*cols))
    out.json("summary.json", summary)
    return summary


def _mesh_or_none(cfg: RunConfig, p: ModelParams, level=None):
    try:
        return bm.reconstruct_bis(p, QuenchSpec(0), cfg.mesh_settings(level))
    except bm.BISAbsentError:
        return None


def cmd_bis(cfg: RunConfig, out: Outputs, rng) -> dict:
    p = cfg.model()
    mesh = bm.reconstruct_bis(p, QuenchSpec(0), cfg.mesh_settings())
    bm.write_obj(mesh, out.path("bis.obj"))
    bm.write_sidecar(mesh, p, out.path("bis_residuals.json"))
    summary = {
        "n_vertices": mesh.n_vertices,
        "n_faces": mesh.n_faces,
        "euler_characteristic": mesh.euler_characteristic(),
        "closed": mesh.is_closed(),
        "max_abs_h0[t0]": float(np.max(np.abs(mesh.residuals(p)))),
        "flagged_vertices": int(mesh.flags.sum()),
    }
    out.json("summary.json", summary)
    return summary


def _oracle(p):
    try:
        return equilibrium_winding(p.replace(h_4=0.0))
    except GapClosedError:
        return None


def cmd_winding(cfg: RunConfig, out: Outputs, rng) -> dict:
    p = cfg.model()
    level = cfg["mesh.level"]
    mesh = _mesh_or_none(cfg, p)
    result = {"m_z[t0]": p.m_z, "level": level, "nu3_oracle": _oracle(p)}
    if mesh is None:
        result.update(W=0.0, nearest_integer=0, bis_present=False)
        out.json("winding.json", result)
        return result
    tex = inv.g_field(mesh, p, cfg.probe_step)
    W = inv.winding_W(mesh, tex)
    result.update(W=W.value, nearest_integer=int(round(W.value)), bis_present=True, n_faces=mesh.n_faces)
    if p.h_4 != 0:
        result["W_SB"] = inv.winding_WSB(mesh, tex).value
    tex.write_csv(out.path("g_texture.csv"), mesh.vertices)
    bm.write_obj(mesh, out.path("bis.obj"))
    if cfg["noise.enabled"]:
        cal = cfg.calibration(rng)
        pipeline = _noisy_winding_pipeline(cfg, p, cal, level)
        rep = nz.mc_propagate(pipeline, cfg["noise.trials"], cfg["run.seed"], cfg["run.threads"])
        result["noise"] = rep.to_dict() | {"calibration_N[photons]": list(cal.N)}
        result["error_estimate"] = rep.std
    out.json("winding.json", result)
    return result


def cmd_charges(cfg: RunConfig, out: Outputs, rng) -> dict:
    p = cfg.model()
    m_i = cfg["quench.m_i"]
    recs = ch.find_charges(p, m_i, cfg["charges.region"])
    mesh = _mesh_or_none(cfg, p, min(cfg["mesh.level"], 4))
    table = [r.to_dict() for r in recs]
    if mesh is not None:
        for row, r in zip(table, recs):
            row["enclosed_by_mesh_parity"] = ch.enclosed_by_mesh(mesh, r.location, p)
    out.json("charges.json", {"charges": table, "enclosed_total": ch.enclosed_total(mesh, recs)})
    region = cfg["charges.region"]
    if ch.REGIONS[region] is not None:
        ch.write_norm_map(p, m_i, region, out.path(f"norm_map_{region}.csv"))
    tracks = {}
    m_values = _linspace3(cfg["charges.m_values"])
    for seg in cfg["charges.segments"].split():
        a, b = seg.split("-")
        tr = ch.track_charges(p, m_values, (a, b))
        tracks[seg] = tr.to_dict()
    out.json("tracks.json", tracks)
    return {"n_charges": len(recs), "enclosed_total": ch.enclosed_total(mesh, recs)}


def cmd_transition(cfg: RunConfig, out: Outputs, rng) -> dict:
    p = cfg.model()
    rng_m = (cfg["transition.m_min"], cfg["transition.m_max"])
    m_c = inv.transition_scan(p, rng_m)
    k0 = inv.diagonal_bis_point(p)
    tr = ch.track_charges(p, _linspace3(cfg["charges.m_values"]), ("O1", "O8"))
    crossing = tr.bis_crossings[0][0] if tr.bis_crossings else None
    result = {
        "k0[rad]": k0.tolist(),
        "m_c_scan[t0]": m_c,
        "m_c_closed_form[t0]": inv.critical_depth_closed_form(p),
        "m_c_charge_crossing[t0]": crossing,
    }
    if cfg["noise.enabled"]:
        cal = cfg.calibration(rng)
        ms = _linspace3(cfg["transition.noisy_m"])

        def pipeline(g):
            av = nz.NoisyAverager(cal, g, cfg["noise.n_time"], cfg["noise.mode"], cfg["noise.calibration_noise"])
            return inv.transition_fit(p, ms, av, k0, cfg.probe_step)[0]

        rep = nz.mc_propagate(pipeline, cfg["noise.trials"], cfg["run.seed"], cfg["run.threads"])
        result["m_c_noisy[t0]"] = rep.to_dict() | {"calibration_N[photons]": list(cal.N)}
    out.json("transition.json", result)
    return result


def cmd_phase_diagram(cfg: RunConfig, out: Outputs, rng) -> dict:
    base = cfg.model()
    level = cfg["phase.level"]
    n = int(round((cfg["phase.m_max"] - cfg["phase.m_min"]) / cfg["phase.step"]))
    rows = []
    for i in range(n + 1):
        m_z = round(cfg["phase.m_min"] + i * cfg["phase.step"], 10)
        p = base.replace(m_z=m_z, h_4=0.0)
        if any(abs(m_z / p.t_0 - b) < 1e-9 for b in PHASE_BOUNDARIES):
            rows.append((m_z, "", "", "gap_closed"))
            continue
        mesh = _mesh_or_none(cfg, p, level)
        if mesh is None:
            W = 0.0
        else:
            W = inv.winding_W(mesh, inv.g_field(mesh, p, cfg.probe_step)).value
        rows.append((m_z, W, equilibrium_winding(p), "ok"))
    out.csv("phase_diagram.csv", ["m_z[t0]", "W[1]", "nu3_oracle[1]", "status"], rows)
    mismatches = [r[0] for r in rows if r[3] == "ok" and round(r[1]) != r[2]]
    summary = {"n_points": len(rows), "mismatches[t0]": mismatches, "level": level}
    out.json("summary.json", summary)
    return summary


COMMANDS = {
    "polarization": cmd_polarization,
    "bis": cmd_bis,
    "winding": cmd_winding,
    "charges": cmd_charges,
    "transition": cmd_transition,
    "phase-diagram": cmd_phase_diagram,
}

NUMERIC_ERRORS = (
    ArithmeticError,
    GapClosedError,
    bm.BISAbsentError,
    bm.StitchError,
    inv.IllConditionedFaceError,
    inv.DegenerateTextureError,
    inv.TransitionNotFoundError,
    ch.DegreeError,
    ch.OnBISError,
    nz.SingularDesignError,
    np.linalg.LinAlgError,
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chiralquench", description="Quench-dynamics topology toolkit")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="flat key = value config file")
    ap.add_argument("--out", type=Path, help="output directory (run.out)")
    ap.add_argument("--seed", type=int, help="master RNG seed (run.seed)")
    ap.add_argument("--noise", choices=("on", "off"), help="shot-noise emulation (noise.enabled)")
    ap.add_argument("--threads", type=int, help="worker threads for Monte Carlo trials (run.threads)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.noise is not None:
        overrides.append(f"noise.enabled={args.noise}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["run.out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out = Outputs(out_dir, args.command)
    rng = np.random.default_rng(cfg["run.seed"])
    start = time.perf_counter()
    try:
        summary = COMMANDS[args.command](cfg, out, rng)
    except ConfigError as exc:
        out.abort()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        out.abort()
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BaseException:
        out.abort()
        raise
    manifest = {
        "command": args.command,
        "config": cfg.echo(),
        "seed": cfg["run.seed"],
        "versions": _versions(),
        "wall_time[s]": round(time.perf_counter() - start, 3),
    }
    out.commit(manifest)
    print(json.dumps({k: _finite(v) for k, v in summary.items()}, default=_jsonable, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
