"""``torevac`` command line.

Configuration is a plain ``key=value`` file (``#`` starts a comment);
``--set key=value``, ``--seed`` and ``--out`` override it.  Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boundary_data import (
    OUTER,
    TWO_PI,
    BoundarySamples,
    Conductivity,
    build_cauchy_trace,
    load_measurements,
    save_measurements,
)
from .errors import ConfigError, MeasurementError, StagnationError, TorevacError
from .hardy import (
    AnnulusGeometry,
    cross_validate,
    inner_prediction,
    save_laurent,
    solve_bep,
    write_bep_report,
)
from .mesh import ClosedCurve, OuterCircle, generate_mesh, quality, save_mesh
from .shape_opt import (
    OptimizationConfig,
    load_curve,
    optimize,
    recover_constant_c,
    save_curve,
    save_history,
    save_snapshots,
)
from .svg import circle_points, write_curves_svg
from .synth import filament_dataset, manufactured_dataset, quadratic_u0, star_curve

log = logging.getLogger("torevac")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _opt_path(s: str):
    return None if s.strip().lower() in ("", "none") else Path(s)


# key -> (parser, default)
SCHEMA = {
    "center_r": (float, 2.42),
    "center_z": (float, 0.0),
    "radius": (float, 0.92),
    "sigma": (str, "inverse_r"),
    "sigma_value": (float, 1.0),
    "h": (float, 0.03),
    "criterion": (str, "dirichlet"),
    "c": (float, 0.0),
    "max_iters": (int, 200),
    "epsilon_stop": (float, 1e-8),
    "t0": (_opt_float, None),
    "beta": (float, 0.5),
    "max_displacement": (float, 0.5),
    "smooth_every": (int, 10),
    "neumann_convention": (str, "proof"),
    "measurements": (_opt_path, None),
    "initial_curve": (_opt_path, None),
    "initial_radius": (float, 0.4),
    "limiter": (_opt_path, None),
    "limiter_radius": (float, 0.75),
    "c1": (float, 0.2),
    "truth": (str, "star"),
    "truth_radius": (float, 0.45),
    "star_a2": (float, 0.15),
    "star_b3": (float, 0.08),
    "synth_h": (float, 0.015),
    "n_samples": (int, 256),
    "noise": (float, 0.0),
    "u0_a": (float, -0.2),
    "u0_b": (float, -0.5),
    "filament_r": (float, 2.45),
    "filament_z": (float, 0.05),
    "c_true": (float, 0.15),
    "bep_degree": (int, 5),
    "rho_inner": (float, 0.7),
    "arc_start": (float, 0.0),
    "arc_stop": (float, 1.5 * math.pi),
    "cv_fraction": (float, 0.2),
    "bep_phi": (float, 0.0),
    "bep_M": (_opt_float, None),
    "seed": (int, 0),
    "out": (Path, Path("out")),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def center(self) -> tuple[float, float]:
        return (self["center_r"], self["center_z"])

    def sigma(self) -> Conductivity:
        kind = self["sigma"]
        if kind == "inverse_r":
            return Conductivity.inverse_r()
        if kind == "constant":
            return Conductivity.constant(self["sigma_value"])
        raise ConfigError(f"sigma must be 'inverse_r' or 'constant', got {kind!r}")

    def optimization(self, **over) -> OptimizationConfig:
        kw = dict(
            criterion=self["criterion"],
            c=self["c"],
            h=self["h"],
            epsilon_stop=self["epsilon_stop"],
            max_iters=self["max_iters"],
            t0=self["t0"],
            beta=self["beta"],
            max_displacement=self["max_displacement"],
            smooth_every=self["smooth_every"],
            neumann_convention=self["neumann_convention"],
        )
        kw.update(over)
        return OptimizationConfig(**kw)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{ln}: expected key=value, got {line.strip()!r}")
        k, v = (p.strip() for p in s.split("=", 1))
        out[k] = v
    return out


def build_config(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    values = {k: d for k, (_, d) in SCHEMA.items()}
    for k, v in raw.items():
        parse = SCHEMA[k][0]
        try:
            values[k] = parse(v) if isinstance(v, str) else v
        except ValueError:
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    return RunConfig(values)


def load_config(args) -> RunConfig:
    raw: dict = {}
    if args.config is not None:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"{path}: cannot read config ({exc.strerror or exc})") from None
        raw.update(parse_config_text(text, str(path)))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.out is not None:
        raw["out"] = args.out
    return build_config(raw)


def _require_file(cfg: RunConfig, key: str) -> Path:
    p = cfg[key]
    if p is None:
        raise ConfigError(f"{key} is required for this command")
    if not Path(p).is_file():
        raise FileNotFoundError(f"{p}: no such file ({key})")
    return Path(p)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: cannot create output directory ({exc.strerror or exc})") from None
    return out


def _samples(cfg: RunConfig) -> BoundarySamples:
    """Measurements; circle metadata in the file wins over the configured geometry."""
    path = _require_file(cfg, "measurements")
    samples = load_measurements(path)
    with path.open() as fh:
        head = "".join(line for line in fh if line.startswith("#"))
    if "circle_radius" in head:
        return samples
    return load_measurements(path, center=cfg.center, radius=cfg["radius"])


def _initial_curve(cfg: RunConfig, center) -> ClosedCurve:
    if cfg["initial_curve"] is not None:
        return load_curve(_require_file(cfg, "initial_curve"))
    return ClosedCurve.circle(center, cfg["initial_radius"], 128)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    center, R = cfg.center, cfg["radius"]
    truth = cfg["truth"]
    if truth == "filament":
        if cfg["sigma"] != "inverse_r":
            raise ConfigError("the filament generator needs sigma=inverse_r")
        lim = (
            load_curve(_require_file(cfg, "limiter"))
            if cfg["limiter"] is not None
            else ClosedCurve.circle(center, cfg["limiter_radius"], 128)
        )
        ft = filament_dataset(
            (cfg["filament_r"], cfg["filament_z"]), lim, cfg["c_true"], 0.0,
            cfg["n_samples"], cfg["noise"], cfg["seed"], center, R,
        )
        save_measurements(ft.samples, out / "measurements.csv")
        save_curve(lim, out / "limiter.csv")
        (out / "truth.txt").write_text(
            f"c={ft.c!r}\ncontact_r={ft.contact_point[0]!r}\ncontact_z={ft.contact_point[1]!r}\n"
        )
        print(f"wrote {out / 'measurements.csv'} (filament truth, c={ft.c:g})")
        return EXIT_OK
    if truth == "star":
        curve = star_curve(center, cfg["truth_radius"], cfg["star_a2"], cfg["star_b3"])
    elif truth == "circle":
        curve = ClosedCurve.circle(center, cfg["truth_radius"], 256)
    else:
        raise ConfigError(f"truth must be star, circle or filament, got {truth!r}")
    mt = manufactured_dataset(
        curve, cfg.sigma(), cfg["synth_h"], cfg["n_samples"],
        quadratic_u0(center, cfg["u0_a"], cfg["u0_b"]), cfg["c"], cfg["noise"], cfg["seed"], center, R,
    )
    save_measurements(mt.samples, out / "measurements.csv")
    save_curve(curve, out / "truth_curve.csv")
    print(f"wrote {out / 'measurements.csv'} and {out / 'truth_curve.csv'}")
    return EXIT_OK


def _split_arcs(cfg: RunConfig):
    a, b = cfg["arc_start"], cfg["arc_stop"]
    f = cfg["cv_fraction"]
    if not b > a or b - a >= TWO_PI:
        raise ConfigError("need arc_start < arc_stop with arc length below 2*pi")
    if not 0.0 < f < 1.0:
        raise ConfigError("cv_fraction must lie strictly between 0 and 1 (I1 and I2 nonempty)")
    # validation arc in the middle of I, so I1 surrounds it on both sides
    lo = a + 0.5 * (1.0 - f) * (b - a)
    hi = a + 0.5 * (1.0 + f) * (b - a)
    return (a, b), (((a, lo), (hi, b)), (lo, hi))


def cmd_bep(cfg: RunConfig) -> int:
    (a, b), split = _split_arcs(cfg)
    samples = _samples(cfg)
    out = _out_dir(cfg)
    center, R = samples.circle_center, samples.circle_radius
    if not 0 < cfg["rho_inner"] < R:
        raise ConfigError("rho_inner must lie in (0, radius)")
    geom = AnnulusGeometry(center, cfg["rho_inner"], R)
    sigma = cfg.sigma()
    if not sigma.is_constant:
        log.warning("the completion solves the harmonic case; sigma is only used for the conjugate flux")
    u0s, u1s = samples.splines()
    trace, flux = build_cauchy_trace(u0s, u1s, sigma, center, R)
    b0 = flux / TWO_PI
    N = cfg["bep_degree"]
    phi = cfg["bep_phi"]
    if cfg["bep_M"] is None:
        M2, sol = cross_validate(trace, split, phi, N, geom, log_coeff=b0)
    else:
        M2 = cfg["bep_M"]
        sol = solve_bep(trace.restrict(OUTER, a, b), phi, M2, N, geom, log_coeff=b0)
    save_laurent(sol.model, out / "laurent.csv")
    write_bep_report([sol], out / "bep_report.csv")
    theta = TWO_PI * np.arange(cfg["n_samples"]) / cfg["n_samples"]
    u, du = inner_prediction(sol.model, theta)
    save_measurements(BoundarySamples(theta, u, du, center, geom.rho_inner), out / "inner_prediction.csv")
    print(f"M={M2:.6g} lambda={sol.lam:.6g} error_I={sol.error_I:.3e} constraint_J={sol.constraint_J:.3e}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    samples = _samples(cfg)
    initial = _initial_curve(cfg, samples.circle_center)
    out = _out_dir(cfg)
    curve, hist = optimize(samples, cfg.sigma(), cfg.optimization(), initial)
    save_curve(curve, out / "final_curve.csv")
    save_history(hist, out / "history.csv")
    save_snapshots(hist, out / "snapshots.csv")
    write_curves_svg(
        out / "optimize.svg",
        [circle_points(samples.circle_center, samples.circle_radius), initial.points, curve.points],
        [{"width": 1.5}, {"dash": "4 3", "stroke": "gray"}, {"stroke": "red"}],
    )
    n_desc = len(hist.descent_records)
    print(f"iterations={n_desc} J0={hist.J[0]:.6e} J={hist.J[-1]:.6e} stop={hist.stop_reason}")
    if hist.stop_reason == "stagnation" and n_desc == 0:
        print("error: no descent step could be taken", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_recover_c(cfg: RunConfig) -> int:
    samples = _samples(cfg)
    center = samples.circle_center
    limiter = (
        load_curve(_require_file(cfg, "limiter"))
        if cfg["limiter"] is not None
        else ClosedCurve.circle(center, cfg["limiter_radius"], 128)
    )
    initial = load_curve(_require_file(cfg, "initial_curve")) if cfg["initial_curve"] is not None else None
    out = _out_dir(cfg)
    res = recover_constant_c(samples, cfg.sigma(), limiter, cfg["c1"], cfg.optimization(), initial)
    save_curve(res.curve, out / "plasma_boundary.csv")
    save_curve(res.outer_curve, out / "level_c1.csv")
    save_history(res.history, out / "history.csv")
    (out / "c_estimate.txt").write_text(f"{res.c_est!r}\n")
    write_curves_svg(
        out / "recover_c.svg",
        [circle_points(center, samples.circle_radius), limiter.points, res.outer_curve.points, res.curve.points],
        [{"width": 1.0}, {"width": 3.0}, {"dash": "6 3"}, {"dash": "2 2", "stroke": "red"}],
    )
    print(f"c_est={res.c_est:.10g}")
    print(f"contact=({res.contact_point[0]:.6g}, {res.contact_point[1]:.6g}) inside_limiter={res.inside_limiter}")
    return EXIT_OK


def cmd_mesh_info(cfg: RunConfig) -> int:
    center = cfg.center
    initial = _initial_curve(cfg, center)
    out = _out_dir(cfg)
    mesh = generate_mesh(OuterCircle(center, cfg["radius"]), initial, cfg["h"])
    q = quality(mesh)
    save_mesh(mesh, out / "mesh.txt")
    print(
        f"nodes={mesh.n_nodes} triangles={mesh.n_triangles} "
        f"min_angle={q.min_angle:.3f} min_area_ratio={q.min_area_ratio:.4g} edge_ratio={q.edge_ratio:.3f}"
    )
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "bep": cmd_bep,
    "optimize": cmd_optimize,
    "recover-c": cmd_recover_c,
    "mesh-info": cmd_mesh_info,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torevac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="key=value configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MeasurementError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TorevacError, StagnationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
