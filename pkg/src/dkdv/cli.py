"""Batch experiment driver: ``dkdv <subcommand> --config file.json``.

Outputs of a subcommand go to ``<out>/<subcommand>/``.  They are written to
a staging directory first and swapped into place only when complete, so a
directory is either a whole run (with ``manifest.json``) or absent.  Failures
leave a directory holding ``error.json`` instead.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bilinear_lab as bl
from . import bourgain as bg
from . import evolution as ev
from .plotting import DecaySeries, emit_plot
from .spectral_core import Field, ModelParams, make_grid, sobolev_norm

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = ("solve", "picard", "decay", "bilinear-sweep", "blocks", "verify")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.key_path = path


DEFAULTS: dict = {
    "model": {"alpha": 1.0, "s": -0.9, "b": 0.5, "delta": 0.01, "nu_probe": 0.1},
    "grid": {"n_points": 512, "L": 64.0 * math.pi, "n_time": 512, "T_box": 4.0},
    "initial": {"kind": "sech2", "amplitude": 1.0, "width": 2.0, "roughness": 0.0},
    "run": {"dt": None, "T": 1.0, "record_every": 10, "s_probe": None},
    "picard": {"T": 0.5, "n_quad": 257, "max_iters": 50, "s_c_plus": None, "gamma": None},
    "sweep": {"s": [-0.9, -0.7], "alpha": [0.25], "n1_list": [16, 32, 64, 128, 256],
              "blocks": None},
    "verify": {"trials": 10, "kinds": None, "theta": 0.125, "rho": 0.4},
    "io": {"out": "out", "seed": 0, "timestamp": False},
}

_NUMBER = (int, float)


def _check_type(path, value, kinds, nullable=False):
    if value is None and nullable:
        return
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(path, f"expected {'/'.join(k.__name__ for k in kinds)}, got bool")
    if not isinstance(value, kinds):
        raise ConfigError(path, f"expected {'/'.join(k.__name__ for k in kinds)}, "
                                f"got {type(value).__name__}")


_SCHEMA = {
    "model.alpha": (_NUMBER, False), "model.s": (_NUMBER, False), "model.b": (_NUMBER, False),
    "model.delta": (_NUMBER, False), "model.nu_probe": (_NUMBER, False),
    "grid.n_points": ((int,), False), "grid.L": (_NUMBER, False), "grid.n_time": ((int,), False),
    "grid.T_box": (_NUMBER, False),
    "initial.kind": ((str,), False), "initial.amplitude": (_NUMBER, False),
    "initial.width": (_NUMBER, False), "initial.roughness": (_NUMBER, False),
    "run.dt": (_NUMBER, True), "run.T": (_NUMBER, False), "run.record_every": ((int,), False),
    "run.s_probe": (_NUMBER, True),
    "picard.T": (_NUMBER, False), "picard.n_quad": ((int,), False),
    "picard.max_iters": ((int,), False), "picard.s_c_plus": (_NUMBER, True),
    "picard.gamma": (_NUMBER, True),
    "sweep.s": ((list,), False), "sweep.alpha": ((list,), False), "sweep.n1_list": ((list,), False),
    "sweep.blocks": ((list,), True),
    "verify.trials": ((int,), False), "verify.kinds": ((list,), True),
    "verify.theta": (_NUMBER, False), "verify.rho": (_NUMBER, False),
    "io.out": ((str,), False), "io.seed": ((int,), False), "io.timestamp": ((bool,), False),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; ``raw`` keeps the merged document with defaults applied."""

    raw: dict
    model: ModelParams

    def section(self, name: str) -> dict:
        return self.raw[name]

    def grid(self):
        g = self.raw["grid"]
        return make_grid(g["n_points"], g["L"])

    def st_grid(self) -> bg.SpaceTimeGrid:
        g = self.raw["grid"]
        return bg.SpaceTimeGrid(self.grid(), g["n_time"], float(g["T_box"]))

    def picard(self) -> ev.PicardConfig:
        p = self.raw["picard"]
        return ev.PicardConfig(float(p["T"]), p["n_quad"], p["max_iters"], p["s_c_plus"], p["gamma"])


def _merge(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a JSON object")
    merged = copy.deepcopy(DEFAULTS)
    for sec, body in doc.items():
        if sec not in DEFAULTS:
            raise ConfigError(sec, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(sec, "section must be an object")
        for key, value in body.items():
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")
            merged[sec][key] = value
    return merged


def validate(doc: dict) -> ExperimentConfig:
    """Merge ``doc`` over the defaults and check every constraint; errors carry key paths."""
    raw = _merge(doc)
    for path, (kinds, nullable) in _SCHEMA.items():
        sec, key = path.split(".")
        _check_type(path, raw[sec][key], kinds, nullable)
    m = raw["model"]
    try:
        model = ModelParams(**{k: float(v) for k, v in m.items()})
    except ValueError as exc:
        bad = next((k for k in m if k in str(exc).split()[0]), "alpha")
        raise ConfigError(f"model.{bad}", str(exc)) from None

    def guard(path, fn):
        try:
            fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(path, str(exc)) from None

    g = raw["grid"]
    guard("grid.n_points", lambda: make_grid(g["n_points"], 1.0))
    guard("grid.L", lambda: make_grid(8, float(g["L"])))
    guard("grid.n_time", lambda: bg.SpaceTimeGrid(make_grid(8, 1.0), g["n_time"], 4.0))
    guard("grid.T_box", lambda: bg.SpaceTimeGrid(make_grid(8, 1.0), 16, float(g["T_box"])))
    ini = raw["initial"]
    if ini["kind"] not in ("sech2", "gaussian", "random", "zero"):
        raise ConfigError("initial.kind", "must be sech2, gaussian, random or zero")
    if not ini["width"] > 0:
        raise ConfigError("initial.width", "must be positive")
    r = raw["run"]
    if r["dt"] is not None and not (r["dt"] > 0 and math.isfinite(r["dt"])):
        raise ConfigError("run.dt", f"must be positive, got {r['dt']}")
    if not (r["T"] > 0 and math.isfinite(r["T"])):
        raise ConfigError("run.T", f"must be positive, got {r['T']}")
    if r["record_every"] < 1:
        raise ConfigError("run.record_every", "must be >= 1")
    p = raw["picard"]
    guard("picard", lambda: ev.PicardConfig(float(p["T"]), p["n_quad"], p["max_iters"],
                                           p["s_c_plus"], p["gamma"]))
    if p["s_c_plus"] is not None and not p["s_c_plus"] > bl.s_alpha(model.alpha):
        raise ConfigError("picard.s_c_plus", f"must exceed s_alpha = {bl.s_alpha(model.alpha):.6g}")
    sw = raw["sweep"]
    for i, a in enumerate(sw["alpha"]):
        guard(f"sweep.alpha[{i}]", lambda a=a: bl.s_alpha(a))
    for i, s in enumerate(sw["s"]):
        _check_type(f"sweep.s[{i}]", s, _NUMBER)
    for i, n in enumerate(sw["n1_list"]):
        if not bl._is_dyadic(n):
            raise ConfigError(f"sweep.n1_list[{i}]", f"must be a power of two, got {n!r}")
    if any(b <= a for a, b in zip(sw["n1_list"], sw["n1_list"][1:])):
        raise ConfigError("sweep.n1_list", "must be increasing")
    if sw["blocks"] is not None:
        for i, blk in enumerate(sw["blocks"]):
            if not (isinstance(blk, list) and len(blk) == 6):
                raise ConfigError(f"sweep.blocks[{i}]", "expected [N1, N2, N3, L1, L2, L3]")
            guard(f"sweep.blocks[{i}]", lambda blk=blk: bl.DyadicBlock(*blk))
    v = raw["verify"]
    if v["trials"] < 10:
        raise ConfigError("verify.trials", "must be >= 10")
    if v["kinds"] is not None:
        for i, k in enumerate(v["kinds"]):
            guard(f"verify.kinds[{i}]", lambda k=k: bg.LemmaKind(k))
    if not 0.0 <= v["theta"] <= 0.125:
        raise ConfigError("verify.theta", "must lie in [0, 1/8]")
    if not v["rho"] > 0.375:
        raise ConfigError("verify.rho", "must exceed 3/8")
    return ExperimentConfig(raw, model)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    if not text.strip():
        return validate({})
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate(doc)


# -- output handling ------------------------------------------------------------------

def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


def _swap_into_place(stage: Path, final: Path) -> None:
    old = None
    if final.exists():
        old = final.with_name(f".{final.name}.old-{os.getpid()}")
        os.replace(final, old)
    os.replace(stage, final)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _initial_data(cfg: ExperimentConfig, seed: int) -> Field:
    g = cfg.grid()
    ini = cfg.section("initial")
    x, L = g.x, g.domain_length
    a, w = float(ini["amplitude"]), float(ini["width"])
    if ini["kind"] == "zero":
        return Field(g, np.zeros(g.n_points))
    if ini["kind"] == "sech2":
        return Field(g, a / np.cosh((x - L / 2) / w) ** 2)
    if ini["kind"] == "gaussian":
        return Field(g, a * np.exp(-(((x - L / 2) / w) ** 2)))
    rng = np.random.default_rng(seed)
    xi = g.frequencies
    coef = (1.0 + xi**2) ** (-(ini["roughness"] + 0.5) / 2.0) * (
        rng.standard_normal(g.n_points) + 1j * rng.standard_normal(g.n_points))
    u = np.fft.ifft(np.fft.ifftshift(coef)).real
    u -= u.mean()
    peak = np.max(np.abs(u))
    return Field(g, a * u / peak if peak > 0 else u)


def _probe_index(cfg: ExperimentConfig) -> float:
    s = cfg.section("run")["s_probe"]
    return 0.0 if s is None else float(s)


def _cmd_solve(cfg, out: Path, seed: int, jobs: int):
    r = cfg.section("run")
    u0 = _initial_data(cfg, seed)
    traj = ev.solve_ivp(u0, float(r["T"]), r["dt"], cfg.model, r["record_every"])
    traj.write_csv(out / "trajectory.csv", _probe_index(cfg))
    traj.write_snapshots(out / "snapshots.bin")
    l2 = traj.l2_norms()
    _dump_json({"T": traj.times[-1], "records": len(traj.times), "l2_initial": l2[0],
                "l2_final": l2[-1], "l2_nonincreasing": ev.is_nonincreasing(l2),
                "mean_drift": max(abs(m - traj.means()[0]) for m in traj.means())},
               out / "summary.json")


def _cmd_decay(cfg, out: Path, seed: int, jobs: int):
    r = cfg.section("run")
    u0 = _initial_data(cfg, seed)
    s_plus = cfg.section("picard")["s_c_plus"]
    s_plus = bl.s_alpha(cfg.model.alpha) + 0.05 if s_plus is None else float(s_plus)
    traj = ev.solve_ivp(u0, float(r["T"]), r["dt"], cfg.model, r["record_every"])
    l2 = ev.decay_diagnostic(traj, 0.0)
    hs = ev.decay_diagnostic(traj, s_plus)
    ts = cfg.section("io")["timestamp"]
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") if ts else None
    emit_plot(DecaySeries(traj.times, hs, f"H^{s_plus:.3g} norm"), out / "decay.svg", timestamp=stamp)
    emit_plot(DecaySeries(traj.times, l2, "L2 norm"), out / "decay_l2.svg", timestamp=stamp)
    _dump_json({"s_probe": s_plus, "nonincreasing_Hs": ev.is_nonincreasing(hs),
                "nonincreasing_L2": ev.is_nonincreasing(l2), "times": traj.times,
                "Hs": hs, "L2": l2}, out / "decay.json")


def _cmd_picard(cfg, out: Path, seed: int, jobs: int):
    pc = cfg.picard()
    u0 = _initial_data(cfg, seed)
    u, ratios = ev.picard_solve(u0, pc, cfg.model)
    st = u.st_grid
    h = st.dt
    ts, rows = ev.lattice_snapshots(u, 0.0, pc.T / 2.0)
    traj = ev.solve_ivp(u0, float(ts[-1]) if ts[-1] > 0 else h, h / 4.0, cfg.model, 4)
    phys = traj.physical()
    diff = 0.0
    for t, row in zip(ts, rows):
        k = int(round(t / (h / 4.0))) // 4
        diff = max(diff, math.sqrt(u0.grid.spacing * float(np.sum((row - phys[k]) ** 2))))
    _dump_json({"T": pc.T, "n_quad": pc.n_quad, "iterations": len(ratios) + 1,
                "contraction_ratios": ratios, "max_l2_difference_vs_solve": diff,
                "H_minus_half_norm_u0": sobolev_norm(ev.transform_field(u0), -0.5)},
               out / "picard.json")
    with open(out / "contraction.csv", "w", newline="") as fh:
        fh.write("k,ratio\n")
        for k, r in enumerate(ratios, start=1):
            fh.write(f"{k},{r!r}\n")


def _cmd_sweep(cfg, out: Path, seed: int, jobs: int):
    sw = cfg.section("sweep")
    ts = cfg.section("io")["timestamp"]
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") if ts else None
    index = []
    for a in sw["alpha"]:
        for s in sw["s"]:
            rep = bl.sharpness_sweep(float(s), float(a), sw["n1_list"], cfg.model, jobs=jobs)
            stem = f"sweep_alpha{float(a):g}_s{float(s):g}".replace(".", "p")
            _dump_json(rep.to_dict(), out / f"{stem}.json")
            emit_plot(rep, out / f"{stem}.svg", timestamp=stamp)
            index.append({"alpha": rep.alpha, "s": rep.s, "verdict": rep.verdict,
                          "fitted_slope": rep.fitted_slope, "predicted_slope": rep.predicted_slope,
                          "file": f"{stem}.json"})
    _dump_json(index, out / "sweeps.json")


def default_block_family() -> list[bl.DyadicBlock]:
    """(+-) blocks with ``N_max`` from 4 to 128 in the branch ``L_med <= N_min^2 N_max``."""
    out = []
    for k in range(2, 8):
        n = 2.0**k
        out.append(bl.DyadicBlock(1.0, n, n, n * n, n, n))
        if k >= 3:
            out.append(bl.DyadicBlock(2.0, n, n, 2 * n * n, 2 * n, n))
    return out


def _block_row(blk):
    return blk, bl.dyadic_block_bound(blk, "plus_minus"), bl.block_lower_bound(blk)


def _cmd_blocks(cfg, out: Path, seed: int, jobs: int):
    given = cfg.section("sweep")["blocks"]
    blocks = default_block_family() if given is None else [bl.DyadicBlock(*map(float, b)) for b in given]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_block_row, blocks))
    else:
        rows = [_block_row(b) for b in blocks]
    bl.write_block_table(rows, out / "blocks.csv")
    ratios = [m / b for _, b, m in rows]
    _dump_json({"blocks": len(rows), "min_ratio": min(ratios), "max_ratio": max(ratios),
                "spread": max(ratios) / min(ratios)}, out / "blocks.json")


def _verify_one(args):
    kind, trials, params, seed, theta, rho = args
    kw = {}
    if kind in ("L4_STRICHARTZ", "L2_CONTRACT"):
        kw["theta"] = theta
    if kind == "L4_STRICHARTZ":
        kw["rho"] = rho
    return bg.lemma_check(kind, trials, params, seed, **kw).to_dict()


def _cmd_verify(cfg, out: Path, seed: int, jobs: int):
    v = cfg.section("verify")
    kinds = v["kinds"] or [k.value for k in bg.LemmaKind]
    tasks = [(k, v["trials"], cfg.model, seed, v["theta"], v["rho"]) for k in kinds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_verify_one, tasks))
    else:
        results = [_verify_one(t) for t in tasks]
    for res in results:
        _dump_json(res, out / f"verdict_{res['lemma_id']}.json")
    _dump_json({"all_pass": all(r["pass"] for r in results),
                "passed": [r["lemma_id"] for r in results if r["pass"]]}, out / "verify.json")
    if not all(r["pass"] for r in results):
        failed = [r["lemma_id"] for r in results if not r["pass"]]
        raise ev.NumericalError(f"lemma checks failed: {', '.join(failed)}")


_COMMANDS = {"solve": _cmd_solve, "picard": _cmd_picard, "decay": _cmd_decay,
             "bilinear-sweep": _cmd_sweep, "blocks": _cmd_blocks, "verify": _cmd_verify}


def _classify(exc: BaseException) -> int:
    if isinstance(exc, (ev.NumericalError, FloatingPointError, MemoryError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, TypeError)):
        return EXIT_INVALID
    return EXIT_NUMERICAL


def _error_report(exc: BaseException, code: int, subcommand: str) -> dict:
    rep = {"status": code, "subcommand": subcommand, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rep["key_path"] = exc.key_path
    if isinstance(exc, ev.BlowUpError):
        rep["blowup_time"] = exc.time
    if isinstance(exc, ev.ConvergenceError):
        rep["contraction_ratios"] = exc.ratios
        rep["increments"] = exc.increments
    return rep


def run_subcommand(name: str, config: ExperimentConfig, *, out_dir=None, seed: int | None = None,
                   jobs: int = 1, resume: bool = False) -> int:
    """Run one subcommand and persist its outputs; returns the exit status."""
    if name not in _COMMANDS:
        raise ValueError(f"unknown subcommand {name!r}")
    io = config.section("io")
    root = Path(os.environ.get("DKDV_OUT") or out_dir or io["out"])
    seed = io["seed"] if seed is None else seed
    final = root / name
    if resume and (final / "manifest.json").exists():
        man = json.loads((final / "manifest.json").read_text())
        if man.get("status") == EXIT_OK:
            return EXIT_OK
    root.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=root))
    try:
        _COMMANDS[name](config, stage, seed, jobs)
        code, report = EXIT_OK, None
    except Exception as exc:  # noqa: BLE001 - every failure becomes a report
        code = _classify(exc)
        report = _error_report(exc, code, name)
    if report is not None:
        for p in stage.iterdir():
            if p.is_file():
                p.unlink()
            else:
                shutil.rmtree(p)
        _dump_json(report, stage / "error.json")
    files = sorted(p.name for p in stage.iterdir())
    _dump_json({"subcommand": name, "status": code, "seed": seed, "files": files,
                "config": config.raw}, stage / "manifest.json")
    _swap_into_place(stage, final)
    return code


def _help_epilog() -> str:
    lines = ["configuration defaults (JSON sections and keys):"]
    for sec, body in DEFAULTS.items():
        items = ", ".join(f"{k}={json.dumps(v)}" for k, v in body.items())
        lines.append(f"  {sec}: {items}")
    lines.append("exit status: 0 success, 2 invalid input, 3 numerical failure")
    lines.append("DKDV_OUT, when set, overrides --out")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dkdv", description=__doc__.splitlines()[0],
                                 epilog=_help_epilog(),
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps and lemma checks")
    ap.add_argument("--seed", type=int, default=None, help="overrides io.seed")
    ap.add_argument("--out", default=None, help="output root (default io.out)")
    ap.add_argument("--resume", action="store_true", help="skip when a completed run exists")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        cfg = load_config(args.config)
    except ConfigError as exc:
        root = Path(os.environ.get("DKDV_OUT") or args.out or DEFAULTS["io"]["out"])
        final = root / args.subcommand
        root.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=f".{args.subcommand}.", dir=root))
        _dump_json(_error_report(exc, EXIT_INVALID, args.subcommand), stage / "error.json")
        _dump_json({"subcommand": args.subcommand, "status": EXIT_INVALID,
                    "files": ["error.json"]}, stage / "manifest.json")
        _swap_into_place(stage, final)
        print(f"dkdv: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    code = run_subcommand(args.subcommand, cfg, out_dir=args.out, seed=args.seed, jobs=args.jobs,
                          resume=args.resume)
    if code != EXIT_OK:
        root = Path(os.environ.get("DKDV_OUT") or args.out or cfg.section("io")["out"])
        err = root / args.subcommand / "error.json"
        msg = json.loads(err.read_text())["message"] if err.exists() else ""
        print(f"dkdv {args.subcommand}: failed ({code}): {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
