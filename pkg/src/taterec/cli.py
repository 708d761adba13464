"""Command-line driver: ``taterec <command> --config run.cfg [--out DIR]``.

Commands write their artifacts into the output directory together with
``manifest.csv`` (size and SHA-256 of every artifact) and print one JSON
summary line on stdout. Exit codes: 0 success, 2 configuration, 3 numerical,
4 file I/O, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import AUTO, RunConfig, load_config
from .errors import ConfigError, FormatError, TateRecError
from .fields import (
    DomainSpec,
    Grid,
    ObservationSurface,
    ScalarField,
    Sinogram,
    SoundSpeedField,
    build_observation_surface,
    sample_phantom,
    sample_sound_speed,
)
from .fileio import read_field, read_sinogram, sha256_file, write_field, write_sinogram
from .rays import (
    TrappingReport,
    Trajectory,
    check_nontrapping,
    default_escape_radius,
    integrate_rays,
    seed_lattice,
)
from .reconstruct import (
    CoefficientVector,
    ErrorReport,
    _mode_values_at,
    boundary_coefficients,
    coefficients,
    error_metrics,
    kernel_backprojection,
    reconstruct_operator_formula,
    synthesize,
)
from .spectral import (
    SpectralBasis,
    analytic_rectangle_basis,
    assemble_operator,
    compute_eigenpairs,
    read_basis,
    write_basis,
)
from .wave_sim import ForwardRun, SpongeLayer, dalembert_sinogram, simulate_forward

__all__ = [
    "main",
    "build_parser",
    "Session",
    "PipelineReport",
    "cmd_phantom",
    "cmd_speed",
    "cmd_simulate",
    "cmd_rays",
    "cmd_eigen",
    "cmd_reconstruct",
    "cmd_pipeline",
    "COMMANDS",
]

log = logging.getLogger("taterec")

MANIFEST = "manifest.csv"
REPORT = "report.json"
# trajectories in rays.csv are thinned to at most this many samples each
TRAJECTORY_SAMPLES = 2000


def _g(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class PipelineReport:
    """Stage timings, headline diagnostics and the checksum manifest."""

    timings: dict[str, float] = field(default_factory=dict)
    verdict: str = "not run"
    K: int = 0
    tail_mass: float | None = None
    errors: dict | None = None
    stages: dict[str, dict] = field(default_factory=dict)
    manifest: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "version": __version__,
            "verdict": self.verdict,
            "K": self.K,
            "tail_mass": self.tail_mass,
            "errors": self.errors,
            "stages": self.stages,
            "timings": self.timings,
            "manifest": self.manifest,
        }


class Session:
    """One command invocation: configuration, cached stage results and written files."""

    def __init__(self, cfg: RunConfig, out: str | Path | None = None) -> None:
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.output.dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise FormatError(f"cannot create output directory {self.out}: {exc}") from exc
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self.stages: dict[str, dict] = {}
        self._cache: dict[str, Any] = {}

    # -- bookkeeping --------------------------------------------------------

    def path(self, name: str) -> Path:
        p = self.out / name
        if name not in self.files:
            self.files.append(name)
        return p

    def _cached(self, key: str, build: Callable[[], Any]) -> Any:
        if key not in self._cache:
            t0 = time.perf_counter()
            self._cache[key] = build()
            self.timings[key] = round(time.perf_counter() - t0, 4)
        return self._cache[key]

    def write_csv(self, name: str, header: list[str], rows) -> None:
        try:
            with open(self.path(name), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
        except OSError as exc:
            raise FormatError(f"cannot write {name}: {exc}") from exc

    def write_text(self, name: str, text: str) -> None:
        try:
            self.path(name).write_text(text)
        except OSError as exc:
            raise FormatError(f"cannot write {name}: {exc}") from exc

    def figure(self, name: str, build: Callable[[], Any]) -> None:
        if not self.cfg.output.figures:
            return
        from .plotting import save_figure

        save_figure(build(), self.path(name))

    def image(self, name: str, fld: ScalarField, scaling: str = "minmax") -> None:
        if not self.cfg.output.images or fld.grid.dim != 2:
            return
        from .plotting import render_pgm

        render_pgm(fld, self.path(name), scaling)

    def manifest(self) -> dict[str, dict]:
        out = {}
        for name in sorted(self.files):
            p = self.out / name
            out[name] = {"bytes": p.stat().st_size, "sha256": sha256_file(p)}
        return out

    def write_manifest(self) -> dict[str, dict]:
        entries = self.manifest()
        rows = [[name, e["bytes"], e["sha256"]] for name, e in entries.items()]
        try:
            with open(self.out / MANIFEST, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["file", "bytes", "sha256"])
                w.writerows(rows)
        except OSError as exc:
            raise FormatError(f"cannot write manifest: {exc}") from exc
        return entries

    # -- geometry and inputs ------------------------------------------------

    def geometry(self) -> tuple[Grid, DomainSpec, ObservationSurface]:
        def build():
            grid, domain = self.cfg.grid.build()
            surface = build_observation_surface(domain, self.cfg.grid.n_per_side(grid, domain))
            return grid, domain, surface

        return self._cached("geometry", build)

    def phantom(self) -> ScalarField | None:
        def build():
            grid, _, _ = self.geometry()
            if self.cfg.inputs.phantom:
                f = read_field(self.cfg.inputs.phantom)
                if f.grid != grid:
                    raise ConfigError("phantom file grid differs from [grid]")
                return f
            if len(self.cfg.phantom) == 0:
                return None
            return sample_phantom(self.cfg.phantom, grid)

        return self._cached("phantom", build)

    def speed(self) -> SoundSpeedField:
        def build():
            grid, _, _ = self.geometry()
            if self.cfg.inputs.speed:
                s = read_field(self.cfg.inputs.speed)
                if s.grid != grid:
                    raise ConfigError("speed file grid differs from [grid]")
                return _speed_from_values(grid, s.values)
            return sample_sound_speed(self.cfg.speed, grid)

        return self._cached("speed", build)

    # -- stages -------------------------------------------------------------

    def forward(self) -> tuple[Sinogram, ForwardRun | None]:
        def build():
            _, domain, surface = self.geometry()
            if self.cfg.inputs.sinogram:
                g = read_sinogram(self.cfg.inputs.sinogram)
                if not g.surface.same_layout(surface):
                    raise ConfigError("sinogram detectors differ from the configured surface")
                return g, None
            f = self.phantom()
            if f is None:
                raise ConfigError("no phantom: add a [phantom] section or [inputs] phantom")
            s = self.cfg.solver
            c = self.speed()
            if s.data == "dalembert":
                if not (c.is_constant and c.c_min == 1.0):
                    raise ConfigError("d'Alembert data needs c = 1")
                dt = s.dt if s.dt != AUTO else s.cfl * min(f.grid.spacing)
                t_max = s.t_max if s.t_max != "adaptive" else 1.5 * domain.diameter
                spec = self.cfg.phantom
                g = dalembert_sinogram(lambda x: sample_points(spec, x), surface, dt, t_max)
                run = None
            else:
                sponge = SpongeLayer(s.sponge_thickness, s.sponge_sigma_max, s.boundary, s.sponge_power)
                run = simulate_forward(
                    f, c, sponge, surface,
                    dt=None if s.dt == AUTO else s.dt, t_max=s.t_max, cfl=s.cfl,
                    decay_tol=s.decay_tol, quiet_tol=s.quiet_tol,
                )
                g = run.sinogram
            if s.noise > 0:
                rng = np.random.default_rng(self.cfg.seed)
                scale = s.noise * float(np.max(np.abs(g.values)))
                g = g.with_values(g.values + scale * rng.standard_normal(g.values.shape))
            return g, run

        return self._cached("simulate", build)

    def trapping(self) -> tuple[TrappingReport | None, list[Trajectory]]:
        def build():
            grid, domain, _ = self.geometry()
            r = self.cfg.rays
            if not r.enabled or grid.dim != 2:
                return None, []
            c = self.speed()
            seeds = seed_lattice(domain, r.positions, r.directions)
            r_esc = default_escape_radius(c, domain) if r.r_escape == AUTO else float(r.r_escape)
            dt = None if r.dt == AUTO else float(r.dt)
            report = check_nontrapping(c, seeds, r_esc, r.t_escape, dt=dt)
            x0, xi0 = seeds.arrays()
            picks = _trajectory_picks(report, len(x0), r.trajectories)
            if not picks:
                return report, []
            trajs = integrate_rays(x0[picks], xi0[picks], c, dt=report.dt, t_end=r.t_escape, r_escape=r_esc)
            return report, list(zip(picks, trajs))

        return self._cached("rays", build)

    def basis(self) -> SpectralBasis:
        def build():
            grid, domain, surface = self.geometry()
            c = self.speed()
            e = self.cfg.eigen
            if self.cfg.inputs.basis:
                b = read_basis(self.cfg.inputs.basis, c)
                if not b.surface.same_layout(surface):
                    raise ConfigError("basis cache detectors differ from the configured surface")
                return b
            K = None if e.K == AUTO else int(e.K)
            kind = e.basis
            if kind == AUTO:
                sub = c.restrict(domain).values
                kind = "analytic" if np.all(sub == 1.0) else "numerical"
            if kind == "analytic":
                if not np.all(c.restrict(domain).values == 1.0):
                    raise ConfigError("the analytic basis needs c = 1 on B")
                return analytic_rectangle_basis(domain, K, grid, surface, discrete=e.discrete, trace_scheme=e.trace)
            return compute_eigenpairs(assemble_operator(c, domain), K, e.tol, surface=surface, trace_scheme=e.trace)

        return self._cached("eigen", build)

    def reconstruction(self) -> dict:
        def build():
            g, _ = self.forward()
            b = self.basis()
            rc = self.cfg.reconstruct
            series = boundary_coefficients(g, b)
            route = rc.route if rc.route != "operator" else "second_derivative"
            coeff = coefficients(series, route, rc.closure)
            out: dict[str, Any] = {"series": series, "coeff": coeff, "routes": {route: coeff}}
            if rc.route == "operator":
                out["estimate"] = reconstruct_operator_formula(g, b)
            else:
                out["estimate"] = synthesize(coeff, b)
            if rc.compare_routes:
                out["routes"] = {r: coefficients(series, r, rc.closure) for r in ("sin", "cos", "second_derivative")}
                out["checks"] = _route_checks(g, b, series, out["routes"], rc.kernel_points)
            truth = self.phantom()
            if truth is not None:
                _, domain, _ = self.geometry()
                out["truth"] = truth.restrict(domain)
                out["projection"] = b.project(out["truth"])
                out["errors"] = error_metrics(out["estimate"], truth, domain, basis=b, tail=coeff.tail_mass)
            return out

        return self._cached("reconstruct", build)


def sample_points(spec, x: np.ndarray) -> np.ndarray:
    """Evaluate a primitive sum at arbitrary 1D positions."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for p in spec.primitives:
        out = out + p.evaluate((x,))
    return out


def _speed_from_values(grid: Grid, values: np.ndarray) -> SoundSpeedField:
    """Speed field from raw nodal values; R is the smallest grid-centred ball holding c != 1."""
    center = tuple(0.5 * (o + u) for o, u in zip(grid.origin, grid.upper))
    mesh = grid.mesh()
    r = np.sqrt(sum((m - c0) ** 2 for m, c0 in zip(mesh, center)))
    off = values != 1.0
    radius = float(r[off].max()) if np.any(off) else 0.0
    return SoundSpeedField(grid, values, radius, center)


def _trajectory_picks(report: TrappingReport, n: int, count: int) -> list[int]:
    """Trapped seeds first, then evenly spaced seeds, ``count`` in total."""
    if count <= 0:
        return []
    picks = list(report.trapped[: max(1, count // 2)]) if report.trapped else []
    for i in np.linspace(0, n - 1, count).round().astype(int):
        if len(picks) >= count:
            break
        if int(i) not in picks:
            picks.append(int(i))
    return picks


def _probe_points(domain: DomainSpec, n: int) -> np.ndarray:
    if domain.dim == 1:
        u = (np.arange(n) + 0.5) / n
        return (domain.lower[0] + u * domain.sides[0])[:, None]
    m = max(1, int(round(np.sqrt(n))))
    u = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(domain.lower[0] + u * domain.sides[0], domain.lower[1] + u * domain.sides[1], indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _route_checks(g: Sinogram, b: SpectralBasis, series, routes: dict[str, CoefficientVector], kernel_points: int) -> dict:
    """Pairwise route discrepancies plus the two finite-sum reordering identities."""
    names = list(routes)
    checks: dict[str, float] = {}
    scale = max(np.linalg.norm(v.values) for v in routes.values()) or 1.0
    for i, a in enumerate(names):
        for bname in names[i + 1 :]:
            d = float(np.linalg.norm(routes[a].values - routes[bname].values))
            checks[f"{a}-{bname}"] = d
            checks[f"{a}-{bname} relative"] = d / scale
    op = b.project(reconstruct_operator_formula(g, b))
    d2 = routes["second_derivative"].values
    checks["operator vs second_derivative relative"] = float(np.linalg.norm(op - d2) / (np.linalg.norm(d2) or 1.0))
    if kernel_points > 0:
        pts = _probe_points(b.domain, kernel_points)
        kern = kernel_backprojection(g, b, pts)
        ref = _mode_values_at(b, pts) @ coefficients(series, "sin", closure=False).values
        checks["kernel vs sin relative"] = float(np.linalg.norm(kern - ref) / (np.linalg.norm(ref) or 1.0))
    return checks


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_phantom(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    s = session or Session(cfg, out)
    f = s.phantom()
    if f is None:
        raise ConfigError("no phantom: add a [phantom] section or [inputs] phantom")
    write_field(s.path("phantom.tatf"), f)
    s.image("phantom.pgm", f)
    _, domain, _ = s.geometry()
    from .plotting import plot_field

    s.figure("phantom.png", lambda: plot_field(f, "initial pressure f", domain))
    summary = {"min": float(f.values.min()), "max": float(f.values.max()), "shape": list(f.grid.shape)}
    s.stages["phantom"] = summary
    return summary


def cmd_speed(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    s = session or Session(cfg, out)
    c = s.speed()
    fld = ScalarField(c.grid, c.values)
    write_field(s.path("speed.tatf"), fld)
    s.image("speed.pgm", fld)
    _, domain, _ = s.geometry()
    from .plotting import plot_field

    s.figure("speed.png", lambda: plot_field(fld, "sound speed c", domain))
    summary = {"c_min": c.c_min, "c_max": c.c_max, "radius": c.radius if np.isfinite(c.radius) else None}
    s.stages["speed"] = summary
    return summary


def cmd_simulate(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    s = session or Session(cfg, out)
    g, run = s.forward()
    write_sinogram(s.path("sinogram.tats"), g)
    from .plotting import plot_energy, plot_sinogram

    summary: dict[str, Any] = {"steps": g.steps, "dt": g.dt, "t_max": g.t_max, "detectors": g.surface.count}
    if run is not None:
        e = run.energy
        s.write_csv("energy.csv", ["t", "energy_B"], ([_g(t), _g(v)] for t, v in zip(e.times, e.values)))
        summary.update(run.summary())
        summary["t_energy_1e-3"] = e.first_below(1e-3)
        markers = [(summary["t_energy_1e-3"], "E_B < 1e-3 max")] if summary["t_energy_1e-3"] is not None else []
        s.figure("energy.png", lambda: plot_energy(e.times, e.values, markers))
    s.figure("sinogram.png", lambda: plot_sinogram(g))
    s.stages["simulate"] = summary
    return summary


def cmd_rays(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    s = session or Session(cfg, out)
    report, trajs = s.trapping()
    if report is None:
        summary = {"verdict": "not applicable (rays disabled or one-dimensional)"}
        s.stages["rays"] = summary
        return summary
    s.write_text("rays.txt", report.to_text() + "\n")
    rows = []
    for seed, tr in trajs:
        stride = max(1, int(np.ceil(len(tr) / TRAJECTORY_SAMPLES)))
        idx = np.unique(np.r_[np.arange(0, len(tr), stride), len(tr) - 1])
        for j in idx:
            rows.append([seed, _g(tr.t[j]), _g(tr.x[j, 0]), _g(tr.x[j, 1]), _g(tr.xi[j, 0]), _g(tr.xi[j, 1]), _g(tr.H[j])])
    if trajs:
        s.write_csv("rays.csv", ["seed", "t", "x", "y", "xi_x", "xi_y", "H"], rows)
    c = s.speed()
    _, domain, _ = s.geometry()
    from .plotting import plot_rays

    s.figure("rays.png", lambda: plot_rays([t for _, t in trajs], ScalarField(c.grid, c.values), domain, report.verdict))
    summary = report.summary()
    s.stages["rays"] = summary
    return summary


def cmd_eigen(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    s = session or Session(cfg, out)
    b = s.basis()
    write_basis(s.path("basis.tatb"), b)
    labels = b.labels or tuple((k + 1,) for k in range(b.K))
    res = b.residuals if b.residuals is not None else np.zeros(b.K)
    s.write_csv(
        "eigen.csv", ["k", "label", "lambda", "relative_residual"],
        ([k, " ".join(map(str, labels[k])), _g(b.lam[k]), _g(res[k])] for k in range(b.K)),
    )
    summary = b.summary()
    s.stages["eigen"] = summary
    return summary


def cmd_reconstruct(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    s = session or Session(cfg, out)
    r = s.reconstruction()
    b = s.basis()
    est: ScalarField = r["estimate"]
    write_field(s.path("reconstruction.tatf"), est)
    s.image("reconstruction.pgm", est)
    routes: dict[str, CoefficientVector] = r["routes"]
    labels = b.labels or tuple((k + 1,) for k in range(b.K))
    header = ["k", "label", "lambda"] + [f"f_{name}" for name in routes] + (["projection"] if "projection" in r else [])
    header.append("tail_mass")
    rows = []
    for k in range(b.K):
        row = [k, " ".join(map(str, labels[k])), _g(b.lam[k])] + [_g(v.values[k]) for v in routes.values()]
        if "projection" in r:
            row.append(_g(r["projection"][k]))
        row.append(_g(r["coeff"].tail_mass[k]))
        rows.append(row)
    s.write_csv("coefficients.csv", header, rows)
    summary: dict[str, Any] = {
        "route": cfg.reconstruct.route,
        "closure": cfg.reconstruct.closure,
        "K": b.K,
        "max_tail_mass": float(np.max(r["coeff"].tail_mass)),
    }
    if "checks" in r:
        summary["checks"] = r["checks"]
    from .plotting import plot_coefficients, plot_reconstruction

    if "errors" in r:
        err: ErrorReport = r["errors"]
        summary["errors"] = err.summary()
        s.write_csv("error_report.csv", ["metric", "value"], ([k, _g(v)] for k, v in err.summary().items()))
        s.figure("reconstruction.png", lambda: plot_reconstruction(r["truth"], est, f"relative L2 error {err.rel_l2:.3%}"))
    s.figure(
        "coefficients.png",
        lambda: plot_coefficients(b.lam, {n: v.values for n, v in routes.items()}, r.get("projection")),
    )
    s.stages["reconstruct"] = summary
    return summary


def cmd_pipeline(cfg: RunConfig, out: str | Path | None = None, session: Session | None = None) -> dict:
    """Every stage in order; writes ``report.json`` next to the manifest."""
    s = session or Session(cfg, out)
    grid, _, _ = s.geometry()
    report = PipelineReport()
    cmd_phantom(cfg, session=s)
    cmd_speed(cfg, session=s)
    cmd_simulate(cfg, session=s)
    rays = cmd_rays(cfg, session=s)
    report.verdict = rays["verdict"]
    cmd_eigen(cfg, session=s)
    rec = cmd_reconstruct(cfg, session=s)
    report.K = rec["K"]
    report.tail_mass = rec["max_tail_mass"]
    report.errors = rec.get("errors")
    report.stages = s.stages
    report.timings = dict(s.timings)
    report.manifest = s.manifest()
    try:
        (s.out / REPORT).write_text(json.dumps(report.as_dict(), indent=2, default=_json_default) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write {REPORT}: {exc}") from exc
    return {
        "verdict": report.verdict,
        "K": report.K,
        "tail_mass": report.tail_mass,
        "rel_l2": (report.errors or {}).get("rel_l2"),
        "checks": rec.get("checks"),
    }


COMMANDS: dict[str, Callable[..., dict]] = {
    "phantom": cmd_phantom,
    "speed": cmd_speed,
    "simulate": cmd_simulate,
    "rays": cmd_rays,
    "eigen": cmd_eigen,
    "reconstruct": cmd_reconstruct,
    "pipeline": cmd_pipeline,
}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taterec", description="Thermoacoustic reconstruction by eigenfunction expansion.")
    p.add_argument("--version", action="version", version=f"taterec {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "phantom": "sample the initial pressure",
        "speed": "sample the sound speed",
        "simulate": "simulate boundary data",
        "rays": "empirical non-trapping check",
        "eigen": "build the eigenbasis of B",
        "reconstruct": "reconstruct f inside B",
        "pipeline": "run every stage and write a report",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        sp.add_argument("--verbose", "-v", action="count", default=0, help="log progress to stderr")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    status: dict[str, Any] = {"command": args.command}
    try:
        cfg = load_config(args.config)
        session = Session(cfg, args.out)
        status["out"] = str(session.out)
        result = COMMANDS[args.command](cfg, session=session)
        session.write_manifest()
        status.update(status="ok", exit_code=0, result=result)
        code = 0
    except TateRecError as exc:
        code = exc.exit_code
        status.update(status="error", exit_code=code, error=type(exc).__name__, message=str(exc))
    except OSError as exc:
        code = FormatError.exit_code
        status.update(status="error", exit_code=code, error=type(exc).__name__, message=str(exc))
    except Exception as exc:  # unexpected: keep the one-line contract, show the traceback when verbose
        log.debug("unhandled error", exc_info=True)
        code = TateRecError.exit_code
        status.update(status="error", exit_code=code, error=type(exc).__name__, message=str(exc))
    if code:
        print(f"taterec {args.command}: {status['message']}", file=sys.stderr)
    print(json.dumps(status, default=_json_default, sort_keys=True))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
