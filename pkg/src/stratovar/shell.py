"""Config-driven command line front end.

One TOML file describes the mesh, the material regions, rotation, gravity,
friction, and run controls.  Each subcommand builds what it needs from that
file, runs a pipeline of numerical checks, writes CSV artifacts, and leaves
a plain-text report in which every check carries its value, its tolerance,
and a pass/fail flag.  The process exits 0 only when every check passed.

Field-spec values in the config are either plain constants or named
built-ins ({field = "uniform", ...}, {field = "radial_table", ...}); there
is no expression language.  All quantities are nondimensional unless the
gravitational constant is given as the string "SI".
"""

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:      # Python 3.10
    import tomli as tomllib

from .assembly import assemble, eigenmodes, evolve, frechet_fd_check
from .elastica import PrestressParams, build_prestressed, fluid_lambda, \
    fluid_xi, isotropic_gamma, stress_perturbations
from .gravity import GRAVITATIONAL_CONSTANT_SI, RadialDensityModel, \
    SampledDensity, hydrostatic_solve, poisson_residual
from .mesh import DofMap, box_mesh, layered_ball_mesh, read_mesh, write_mesh
from .model import EarthModel, Material
from .rupture import FrictionLaw, SpringSlider, fault_discretization, \
    fault_evolve, initial_fault_states, spring_slider_run

__all__ = [
    "ConfigError",
    "ModelConfig",
    "RunReport",
    "field_spec",
    "generate_mesh",
    "load_model",
    "run",
    "main",
    "write_coordinate",
    "read_coordinate",
]


class ConfigError(ValueError):
    """Bad config file: a parse failure or a violated model invariant."""


def _load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file")
    except tomllib.TOMLDecodeError as e:
        # tomllib reports "(at line L, column C)" inside the message
        raise ConfigError(f"{path}: parse error: {e}")


def field_spec(value, center=(0.0, 0.0, 0.0)):
    """Turn a config value into a constant or a named built-in field.

    Numbers stay constants.  Tables select a built-in by name:
    {field = "uniform", value = v} is the constant v, and
    {field = "radial_table", r = [...], values = [...]} interpolates
    linearly in the distance from `center`.
    """
    if isinstance(value, bool):
        raise ConfigError(f"cannot interpret field value {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        kind = value.get("field")
        if kind == "uniform":
            return float(value["value"])
        if kind == "radial_table":
            r = np.asarray(value["r"], dtype=float)
            tab = np.asarray(value["values"], dtype=float)
            if r.ndim != 1 or r.shape != tab.shape or np.any(np.diff(r) <= 0):
                raise ConfigError(
                    "radial_table needs increasing r and matching values")
            c = np.asarray(value.get("center", center), dtype=float)

            def radial_field(x):
                rad = np.linalg.norm(np.atleast_2d(x) - c, axis=1)
                return np.interp(rad, r, tab)

            return radial_field
        raise ConfigError(f"unknown field spec {kind!r}")
    raise ConfigError(f"cannot interpret field value {value!r}")


_TOP_TABLES = {"title", "mesh", "region", "rotation", "gravity", "prestress",
               "force", "friction", "slider", "fault", "run"}


@dataclass
class ModelConfig:
    """One parsed run configuration; validation happens while building."""

    path: str
    title: str = ""
    mesh: dict = dataclass_field(default_factory=dict)
    regions: list = dataclass_field(default_factory=list)
    Omega: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(3))
    G: float = 1.0
    prestress: PrestressParams = dataclass_field(default_factory=PrestressParams)
    force: dict = dataclass_field(default_factory=dict)
    gravity: dict = dataclass_field(default_factory=dict)
    friction: dict | None = None
    slider: dict = dataclass_field(default_factory=dict)
    fault: dict = dataclass_field(default_factory=dict)
    run: dict = dataclass_field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        raw = _load_toml(path)
        unknown = sorted(set(raw) - _TOP_TABLES)
        if unknown:
            raise ConfigError(f"{path}: unknown top-level tables {unknown}")
        rot = raw.get("rotation", {})
        Omega = np.asarray(rot.get("Omega", (0.0, 0.0, 0.0)), dtype=float)
        if Omega.shape != (3,):
            raise ConfigError(f"{path}: [rotation] Omega must be a 3-vector")
        grav = raw.get("gravity", {})
        G = grav.get("G", 1.0)
        if isinstance(G, str):
            if G != "SI":
                raise ConfigError(f"{path}: G must be a number or \"SI\"")
            G = GRAVITATIONAL_CONSTANT_SI
        pre = raw.get("prestress", {})
        try:
            params = PrestressParams(a=float(pre.get("a", 0.5)),
                                     b=float(pre.get("b", -0.5)))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}: [prestress]: {e}")
        regions = raw.get("region", [])
        if not isinstance(regions, list):
            raise ConfigError(f"{path}: [[region]] must be an array of tables")
        return cls(path=str(path), title=str(raw.get("title", "")),
                   mesh=dict(raw.get("mesh", {})), regions=regions,
                   Omega=Omega, G=float(G), prestress=params,
                   force=dict(raw.get("force", {})), gravity=dict(grav),
                   friction=raw.get("friction"),
                   slider=dict(raw.get("slider", {})),
                   fault=dict(raw.get("fault", {})),
                   run=dict(raw.get("run", {})))


# mesh generation ----------------------------------------------------------

_BOX_KEYS = {"n", "extent", "origin", "interface", "kinds", "names", "pad",
             "hull"}
_BALL_KEYS = {"radii", "kinds", "names", "n", "transition_layers",
              "shell_layers", "center"}


def generate_mesh(kind, params):
    """Built-in mesh generators behind the config: box or layered_ball."""
    params = {k: tuple(v) if isinstance(v, list) else v
              for k, v in dict(params).items()}
    if kind == "box":
        allowed = _BOX_KEYS
    elif kind == "layered_ball":
        allowed = _BALL_KEYS
    else:
        raise ConfigError(f"unknown mesh kind {kind!r}")
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"[mesh] kind {kind!r} has unknown keys {unknown}")
    try:
        if kind == "box":
            return box_mesh(**params)
        return layered_ball_mesh(**params)
    except ValueError as e:
        raise ConfigError(f"mesh generation failed: {e}")


def _config_mesh(cfg):
    spec = dict(cfg.mesh)
    if "file" in spec:
        extra = sorted(set(spec) - {"file"})
        if extra:
            raise ConfigError(
                f"{cfg.path}: [mesh] file= excludes generator keys {extra}")
        path = Path(cfg.path).parent / spec["file"]
        try:
            return read_mesh(str(path))
        except (OSError, ValueError) as e:
            raise ConfigError(f"{cfg.path}: mesh file: {e}")
    kind = spec.pop("kind", None)
    if kind is None:
        raise ConfigError(f"{cfg.path}: [mesh] needs kind= or file=")
    return generate_mesh(kind, spec)


# model construction -------------------------------------------------------

_REGION_KEYS = {"name", "kind", "rho0", "kappa", "mu", "p0", "T0"}


def _build_material(table, path):
    """Material from one [[region]] table; errors carry the region name."""
    if "name" not in table or "kind" not in table:
        raise ConfigError(f"{path}: every [[region]] needs name and kind")
    name, kind = str(table["name"]), str(table["kind"])
    unknown = sorted(set(table) - _REGION_KEYS)
    if unknown:
        raise ConfigError(f"{path}: region {name!r} has unknown keys {unknown}")
    try:
        rho0 = field_spec(table.get("rho0", 0.0))
        kappa = field_spec(table["kappa"]) if "kappa" in table else None
        p0 = field_spec(table["p0"]) if "p0" in table else None
    except ConfigError as e:
        raise ConfigError(f"{path}: region {name!r}: {e}")
    T0 = None
    if "T0" in table:
        T0 = np.asarray(table["T0"], dtype=float)
        if T0.shape != (3, 3):
            raise ConfigError(f"{path}: region {name!r}: T0 must be 3x3")
    gamma = None
    mu = table.get("mu")
    if kind == "solid":
        # solids take constant isotropic moduli; gamma absorbs kappa
        if not isinstance(kappa, float) or mu is None:
            raise ConfigError(
                f"{path}: solid region {name!r} needs numeric kappa and mu")
        gamma = isotropic_gamma(kappa, float(mu))
        kappa = None
    elif mu:
        # a fluid region carrying shear stiffness must fail validation
        gamma = isotropic_gamma(float(table.get("kappa", 0.0)), float(mu))
    try:
        return Material(name=name, kind=kind, rho0=rho0, gamma=gamma,
                        kappa=kappa, p0=p0, T0=T0)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}")


def _radial_model(cfg):
    g = cfg.gravity
    if "radii" not in g and "densities" not in g:
        return None
    try:
        return RadialDensityModel(
            radii=np.asarray(g["radii"], dtype=float),
            densities=np.asarray(g["densities"], dtype=float),
            G=cfg.G,
            center=np.asarray(g.get("center", (0.0, 0.0, 0.0)), dtype=float))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"{cfg.path}: radial density table: {e}")


def _build_model(cfg, mesh):
    by_name = {}
    for table in cfg.regions:
        mat = _build_material(table, cfg.path)
        if mat.name in by_name:
            raise ConfigError(f"{cfg.path}: region {mat.name!r} defined twice")
        by_name[mat.name] = mat
    names = [r.name for r in mesh.regions]
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigError(
            f"{cfg.path}: mesh regions {missing} have no [[region]] table")
    unused = sorted(set(by_name) - set(names))
    if unused:
        raise ConfigError(
            f"{cfg.path}: [[region]] tables {unused} match no mesh region")
    materials = [by_name[n] for n in names]

    kwargs = {}
    if cfg.force:
        if cfg.force.get("field", "linear") != "linear":
            raise ConfigError(
                f"{cfg.path}: [force] supports only the \"linear\" built-in")
        g = np.asarray(cfg.force.get("gradient", (0.0, 0.0, 0.0)), dtype=float)
        if g.shape != (3,):
            raise ConfigError(f"{cfg.path}: [force] gradient must be a 3-vector")
        kwargs["force_value"] = lambda x: np.atleast_2d(x) @ g
        kwargs["force_grad"] = lambda x: np.broadcast_to(
            g, (len(np.atleast_2d(x)), 3)).copy()

    radial = _radial_model(cfg)
    try:
        if radial is not None and cfg.gravity.get("attach", False):
            model = EarthModel.with_radial_gravity(
                materials, radial, Omega=cfg.Omega, G=cfg.G,
                params=cfg.prestress, **kwargs)
        else:
            model = EarthModel(materials, Omega=cfg.Omega, G=cfg.G,
                               params=cfg.prestress, **kwargs)
        model.check_against(mesh)
    except ValueError as e:
        raise ConfigError(f"{cfg.path}: {e}")
    return model


def load_model(path):
    """Model and mesh from one config file.

    Returns (EarthModel, CompositeMesh) after cross-validation: every mesh
    region has exactly one [[region]] table of the same kind, fluids carry
    kappa and p0 only, and referenced region names all exist.
    """
    cfg = ModelConfig.from_file(path)
    if not cfg.mesh:
        raise ConfigError(f"{path}: config has no [mesh] table")
    mesh = _config_mesh(cfg)
    return _build_model(cfg, mesh), mesh


def _friction_law(cfg):
    if cfg.friction is None:
        raise ConfigError(f"{cfg.path}: this run needs a [friction] table")
    table = dict(cfg.friction)
    known = {"f0", "a", "b", "L_c", "V0", "V_creep", "state_law", "gamma_LD"}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"{cfg.path}: [friction] has unknown keys {unknown}")
    kwargs = {k: (str(v) if k == "state_law" else float(v))
              for k, v in table.items()}
    try:
        return FrictionLaw(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{cfg.path}: [friction]: {e}")


def _rng(cfg):
    return np.random.default_rng(int(cfg.run.get("seed", 0)))


# artifact writers ---------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_coordinate(path, A):
    """Dense matrix to coordinate text: `i j value` per nonzero entry."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("coordinate export needs a matrix")
    idx = np.argwhere(A != 0.0)
    with open(path, "w") as fh:
        fh.write(f"matrix {A.shape[0]} {A.shape[1]} {len(idx)}\n")
        for i, j in idx:
            fh.write(f"{i} {j} {format(A[i, j], '.17g')}\n")


def read_coordinate(path):
    with open(path) as fh:
        head = fh.readline().split()
        if not head or head[0] != "matrix":
            raise ValueError(f"{path}: not a coordinate matrix file")
        rows, cols, nnz = (int(x) for x in head[1:])
        A = np.zeros((rows, cols))
        for _ in range(nnz):
            i, j, v = fh.readline().split()
            A[int(i), int(j)] = float(v)
    return A


# reports ------------------------------------------------------------------

@dataclass
class Check:
    """One numerical check; passes when value <= tol."""

    name: str
    value: float
    tol: float
    passed: bool


@dataclass
class RunReport:
    """Outcome of one subcommand: checks, artifact manifest, timing."""

    command: str
    config: str
    wall_time: float = 0.0
    checks: list = dataclass_field(default_factory=list)
    outputs: list = dataclass_field(default_factory=list)
    notes: list = dataclass_field(default_factory=list)

    def check(self, name, value, tol):
        value = float(value)
        ok = bool(value <= tol)
        self.checks.append(Check(name, value, float(tol), ok))
        return ok

    def note(self, text):
        self.notes.append(str(text))

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failed_names(self):
        return [c.name for c in self.checks if not c.passed]

    def render(self):
        lines = ["stratovar report",
                 f"command: {self.command}",
                 f"config: {self.config}",
                 f"wall_time_s: {self.wall_time:.3f}",
                 "checks:"]
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"  [{flag}] {c.name}: value={c.value:.6e}"
                         f" tol={c.tol:.6e}")
        if self.notes:
            lines.append("notes:")
            lines.extend(f"  {n}" for n in self.notes)
        lines.append("outputs:")
        lines.extend(f"  {o}" for o in self.outputs)
        lines.append(f"status: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def write(self, outdir):
        outdir = Path(outdir)
        (outdir / "report.txt").write_text(self.render())
        _write_csv(outdir / "checks.csv", ("check", "value", "tol", "passed"),
                   [(c.name, c.value, c.tol, int(c.passed))
                    for c in self.checks])
        return outdir / "report.txt"


def _need_mesh(cfg, mesh):
    if mesh is None:
        raise ConfigError(f"{cfg.path}: this run needs a [mesh] table")


def _sym_resid(A):
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 0.0)
    return float(np.max(np.abs(A - A.T))) / scale if A.size else 0.0


# pipelines ----------------------------------------------------------------

def _run_check_tensors(cfg, model, mesh, outdir, report, threads):
    """Constitutive-tensor symmetries and the stress conversion identity."""
    _need_mesh(cfg, mesh)
    rng = _rng(cfg)
    probe = 0.1 * rng.standard_normal((3, 3))
    std = (model.params.a, model.params.b) == (0.5, -0.5)
    rows = []
    for ri, (mat, region) in enumerate(zip(model.materials, mesh.regions)):
        cells = np.nonzero(mesh.cell_region == ri)[0]
        if len(cells) == 0:
            continue
        x = np.mean(mesh.nodes[mesh.cells[cells[0]]], axis=0)[None, :]
        if mat.kind == "solid":
            T0 = mat.T0_field(x)[0]
            built = build_prestressed(mat.gamma, T0, model.params)
            lam, ups = built["Lambda"], built["Upsilon"]
            xi = built["Xi"].c
            scale = max(1.0, float(np.max(np.abs(lam.c))))
            report.check(f"{region.name}.lambda_major_symmetry",
                         np.max(np.abs(lam.c - lam.c.transpose(2, 3, 0, 1)))
                         / scale, 1e-12)
            report.check(f"{region.name}.xi_minor_symmetry",
                         max(np.max(np.abs(xi - xi.transpose(1, 0, 2, 3))),
                             np.max(np.abs(xi - xi.transpose(0, 1, 3, 2))))
                         / scale, 1e-12)
            pert = stress_perturbations(lam, ups, probe, T0=T0)
            t1 = pert["T1"]
            report.check(f"{region.name}.t1_symmetry",
                         np.max(np.abs(t1 - t1.T))
                         / max(1.0, float(np.max(np.abs(t1)))), 1e-12)
            report.check(f"{region.name}.stress_conversion",
                         pert["conversion_residual"], 1e-8)
            for (i, j, k, l) in np.argwhere(lam.c != 0.0):
                rows.append((region.name, "Lambda", i, j, k, l, lam.c[i, j, k, l]))
        elif mat.kind == "fluid":
            kappa = float(mat.kappa_field(x)[0])
            p0 = float(mat.p0_field(x)[0])
            lam_f = fluid_lambda(kappa, p0)
            xi_f = fluid_xi(kappa, p0)
            if std:
                # the closed fluid forms must agree with the general build
                # run on gamma = kappa I x I and T0 = -p0 I
                built = build_prestressed(isotropic_gamma(kappa, 0.0),
                                          -p0 * np.eye(3), model.params)
                scale = max(1.0, abs(kappa), abs(p0))
                report.check(f"{region.name}.fluid_lambda_agreement",
                             np.max(np.abs(lam_f.c - built["Lambda"].c))
                             / scale, 1e-12)
                report.check(f"{region.name}.fluid_xi_agreement",
                             np.max(np.abs(xi_f.c - built["Xi"].c))
                             / scale, 1e-12)
            else:
                report.note(f"{region.name}: fluid closed-form comparison "
                            "needs prestress params (1/2, -1/2); skipped")
            for (i, j, k, l) in np.argwhere(lam_f.c != 0.0):
                rows.append((region.name, "Lambda", i, j, k, l,
                             lam_f.c[i, j, k, l]))
    _write_csv(outdir / "tensors.csv",
               ("region", "tensor", "i", "j", "k", "l", "value"), rows)
    report.outputs.append("tensors.csv")


def _run_gravity(cfg, model, mesh, outdir, report, threads):
    """Radial potential sampling plus independent consistency checks."""
    radial = _radial_model(cfg)
    if radial is None:
        raise ConfigError(
            f"{cfg.path}: gravity run needs [gravity] radii and densities")
    g = cfg.gravity
    R = radial.outer_radius
    center = radial.center

    # deterministic golden-angle spiral sweeping radius 0 -> 2R
    nsamp = int(g.get("samples", 96))
    i = np.arange(nsamp)
    frac = (i + 0.5) / nsamp
    costh = 1.0 - 2.0 * frac
    sinth = np.sqrt(np.clip(1.0 - costh ** 2, 0.0, None))
    ang = np.pi * (3.0 - np.sqrt(5.0)) * i
    pts = center + (2.0 * R * frac)[:, None] * np.column_stack(
        [sinth * np.cos(ang), sinth * np.sin(ang), costh])
    phi = radial.potential(pts)
    _write_csv(outdir / "potential_samples.csv", ("x", "y", "z", "phi"),
               np.column_stack([pts, phi]))
    report.outputs.append("potential_samples.csv")

    profile = hydrostatic_solve(radial)
    r_prof = np.linspace(0.0, R, int(g.get("profile_samples", 101)))
    _write_csv(outdir / "profile.csv", ("r", "rho", "g", "p0"),
               np.column_stack([r_prof, radial.density(r_prof),
                                radial.gravity(r_prof),
                                profile.pressure(r_prof)]))
    report.outputs.append("profile.csv")

    # continuity of the exact potential across every shell boundary
    eps = 1e-8 * R
    jumps = []
    for rb in radial.radii[1:]:
        lo = radial.potential(center + np.array([rb - eps, 0.0, 0.0]))
        hi = radial.potential(center + np.array([rb + eps, 0.0, 0.0]))
        jumps.append(abs(float(hi) - float(lo)) / max(1.0, abs(float(lo))))
    report.check("potential_continuity", max(jumps), 1e-6)

    # analytic gradient against central differences, away from boundaries
    direction = np.array([1.0, 2.0, 2.0]) / 3.0
    radii = list(radial.radii)
    probes = [0.5 * (a + b) for a, b in zip(radii, radii[1:])] + [1.5 * R]
    h = 1e-5 * max(1.0, R)
    worst = 0.0
    for rp in probes:
        x = center + rp * direction
        grad = radial.potential_gradient(x)
        fd = np.empty(3)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            fd[axis] = (float(radial.potential(x + e))
                        - float(radial.potential(x - e))) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(fd - np.asarray(grad).ravel()))))
    report.check("gradient_consistency", worst, 1e-5)

    # 7-point Poisson residual on a grid inside the innermost shell, where
    # the exact potential is quadratic and the stencil has no truncation
    if len(radial.radii) > 1:
        half = 0.3 * radial.radii[1]
        ng = 7
        ax = np.linspace(-half, half, ng)
        hg = ax[1] - ax[0]
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        pts_g = center + np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        phi_g = radial.potential(pts_g).reshape(ng, ng, ng)
        rho_g = radial.density(
            np.linalg.norm(pts_g - center, axis=1)).reshape(ng, ng, ng)
        res = poisson_residual(phi_g, rho_g, hg, G=radial.G)
        scale = max(1.0, 4.0 * np.pi * radial.G * float(np.max(rho_g)))
        report.check("poisson_core", res["linf"] / scale, 1e-9)

    # midpoint-quadrature potential against the exact exterior values
    quad_n = int(g.get("quad_n", 16))
    sampled = SampledDensity.from_model(radial, extent=R, n=quad_n,
                                        subsample=2)
    targets = center + np.array([[1.5 * R, 0.0, 0.0], [0.0, 0.0, 2.0 * R],
                                 [0.0, -1.8 * R, 0.0]])
    exact = radial.potential(targets)
    approx = sampled.potential(targets)
    rel = float(np.max(np.abs(approx - exact) / np.abs(exact)))
    report.check("quadrature_agreement", rel, float(g.get("quad_tol", 0.02)))

    # hydrostatic pressure decreases outward and vanishes at the surface
    p_prof = profile.pressure(r_prof)
    pmax = max(float(np.max(p_prof)), 1e-300)
    report.check("hydrostatic_monotone",
                 max(0.0, float(np.max(np.diff(p_prof)))) / pmax, 1e-12)
    report.check("hydrostatic_surface", abs(float(p_prof[-1])) / pmax, 1e-12)
    report.note(f"total mass {radial.total_mass:.6g}, "
                f"central pressure {float(p_prof[0]):.6g}")


def _run_assemble(cfg, model, mesh, outdir, report, threads):
    """Assemble the reduced system, export it, and check its structure."""
    _need_mesh(cfg, mesh)
    dofmap = DofMap(mesh)
    system = assemble(model, mesh, dofmap=dofmap, nthreads=threads)

    write_mesh(mesh, outdir / "mesh.txt")
    report.outputs.append("mesh.txt")
    back = read_mesh(outdir / "mesh.txt")
    node_diff = float(np.max(np.abs(back.nodes - mesh.nodes)))
    conn_ok = (np.array_equal(back.cells, mesh.cells)
               and np.array_equal(back.cell_region, mesh.cell_region)
               and np.array_equal(back.split_pairs, mesh.split_pairs))
    report.check("mesh_roundtrip", node_diff + (0.0 if conn_ok else 1.0), 0.0)

    for name, A in (("M", system.M), ("C", system.C), ("K", system.K),
                    ("B", system.B), ("P", system.P)):
        write_coordinate(outdir / f"{name}.mtx", A)
        report.outputs.append(f"{name}.mtx")
    back_K = read_coordinate(outdir / "K.mtx")
    report.check("matrix_roundtrip",
                 float(np.max(np.abs(back_K - system.K))), 0.0)

    report.check("mass_symmetry", _sym_resid(system.M), 1e-12)
    report.check("stiffness_symmetry", _sym_resid(system.K), 1e-12)
    scale_c = max(1.0, float(np.max(np.abs(system.C))))
    report.check("coriolis_antisymmetry",
                 float(np.max(np.abs(system.C + system.C.T))) / scale_c, 1e-12)
    if system.P.size:
        report.check("poisson_symmetry", _sym_resid(system.P), 1e-12)
    lam_min = float(np.min(np.linalg.eigvalsh(system.M)))
    scale_m = max(1.0, float(np.max(np.abs(system.M))))
    report.check("mass_definite", max(0.0, -lam_min) / scale_m, 1e-12)

    rng = _rng(cfg)
    q_u = 1e-3 * rng.standard_normal(dofmap.n_u)
    q_phi = 1e-3 * rng.standard_normal(system.P.shape[0])
    fre = frechet_fd_check(model, mesh, (q_u, q_phi), dofmap=dofmap)
    report.check("action_gradient_fd", fre,
                 float(cfg.run.get("gradient_tol", 1e-6)))
    report.note(f"{dofmap.n_u} displacement dofs, "
                f"{system.P.shape[0]} potential dofs")


def _run_eigen(cfg, model, mesh, outdir, report, threads):
    """Lowest modes of the assembled pencil, with per-mode residuals."""
    _need_mesh(cfg, mesh)
    dofmap = DofMap(mesh)
    system = assemble(model, mesh, dofmap=dofmap, nthreads=threads)
    K = system.effective_stiffness()
    count = int(cfg.run.get("eigencount", 6))
    modes = eigenmodes(system.M, system.C, K, count)
    _write_csv(outdir / "eigen.csv", ("index", "omega", "omega_squared"),
               [(idx, om, om2) for idx, (om, om2)
                in enumerate(zip(modes["omega"], modes["omega2"]))])
    report.outputs.append("eigen.csv")

    scale = max(float(np.linalg.norm(K, np.inf)),
                float(np.linalg.norm(system.M, np.inf)), 1.0)
    rotating = bool(np.any(system.C))
    worst = 0.0
    for om, om2, vec in zip(modes["omega"], modes["omega2"],
                            modes["vectors"].T):
        if rotating:
            r = (K @ vec) - om2 * (system.M @ vec) \
                + 1j * om * (system.C @ vec)
        else:
            r = (K @ vec) - om2 * (system.M @ vec)
        worst = max(worst, float(np.max(np.abs(r))) / scale)
    report.check("pencil_residual", worst, 1e-8)

    omega_scale = np.sqrt(scale / max(1.0, float(np.min(np.diag(system.M)))))
    w2_floor = (1e-5 * omega_scale) ** 2
    near_zero = int(np.sum(np.abs(modes["omega2"]) < w2_floor))
    negative = int(np.sum(modes["omega2"] < -w2_floor))
    report.note(f"near-zero modes: {near_zero} (|omega^2| < {w2_floor:.3e})")
    if negative:
        report.note(f"unstable directions: {negative} (omega^2 < 0)")
    if "expect_rigid" in cfg.run:
        report.check("rigid_mode_count",
                     abs(near_zero - int(cfg.run["expect_rigid"])), 0.5)


def _run_evolve(cfg, model, mesh, outdir, report, threads):
    """Newmark trajectory from a seeded random state; drift must stay flat."""
    _need_mesh(cfg, mesh)
    dofmap = DofMap(mesh)
    system = assemble(model, mesh, dofmap=dofmap, nthreads=threads)
    rng = _rng(cfg)
    n = dofmap.n_u
    amp = float(cfg.run.get("amplitude", 1e-3))
    u0 = amp * rng.standard_normal(n) / np.sqrt(n)
    v0 = np.zeros(n)
    dt = float(cfg.run.get("dt", 0.01))
    steps = int(cfg.run.get("steps", 200))
    rec = evolve(model, mesh, u0, v0, dt, steps, system=system,
                 record_every=int(cfg.run.get("record_every", 1)))
    watch = [int(i) for i in cfg.run.get("watch_dofs", range(min(3, n)))]
    header = ("t", "energy") + tuple(f"q{i}" for i in watch)
    _write_csv(outdir / "trajectory.csv", header,
               [(t, e) + tuple(rec["u"][k][i] for i in watch)
                for k, (t, e) in enumerate(zip(rec["t"], rec["energy"]))])
    report.outputs.append("trajectory.csv")
    report.check("energy_drift", rec["drift"],
                 float(cfg.run.get("drift_tol", 1e-8)))
    report.note(f"{steps} steps of dt={dt:g}, energy {rec['energy'][0]:.6e}")


def _run_slider(cfg, model, mesh, outdir, report, threads):
    """Spring-slider sweep over stiffnesses, flagging stable/unstable."""
    law = _friction_law(cfg)
    s = cfg.slider
    ks = s.get("k", [1.0])
    if np.isscalar(ks):
        ks = [ks]
    sigma_N = float(s.get("sigma_N", 1.0))
    V_load = float(s.get("V_load", law.V0))
    mass = float(s.get("mass", 0.0))
    pert = float(s.get("perturbation", 1e-3))
    # default step: a fraction of the state-evolution time L_c / V_load
    dt = float(s.get("dt", 0.02 * law.L_c / V_load))
    steps = int(s.get("steps", 2000))
    k_crit = (law.b - law.a) * sigma_N / law.L_c
    report.note(f"k_crit = {k_crit:.6g}")

    sweep = []
    for idx, k in enumerate(ks):
        slider = SpringSlider(law=law, k=float(k), sigma_N=sigma_N,
                              V_load=V_load, mass=mass)
        tr = spring_slider_run(slider, dt, steps, perturbation=pert)
        dev = np.abs(np.log(np.maximum(np.abs(tr["V"]), 1e-300) / V_load))
        completed = len(tr["t"]) == steps + 1
        ratio = dev[-1] / max(dev[0], 1e-300) if completed else np.inf
        stable = bool(completed and ratio < 1.0)
        name = f"slider_{idx:02d}.csv"
        _write_csv(outdir / name, ("t", "delta", "V", "psi", "tau"),
                   np.column_stack([tr["t"], tr["delta"], tr["V"],
                                    tr["psi"], tr["tau"]]))
        report.outputs.append(name)
        sweep.append((float(k), float(ratio), int(stable)))
        report.note(f"k={k:g}: {'stable' if stable else 'unstable'} "
                    f"(deviation ratio {ratio:.3g})")
        # independent route: the quasi-static linear boundary k = k_crit
        if mass == 0.0 and abs(k - k_crit) > 0.05 * abs(k_crit):
            predicted = k > k_crit
            report.check(f"k_{k:g}_matches_linear_theory",
                         0.0 if stable == predicted else 1.0, 0.5)
    _write_csv(outdir / "sweep.csv", ("k", "deviation_ratio", "stable"), sweep)
    report.outputs.append("sweep.csv")

    expect = s.get("expect")
    if expect not in (None, "stable", "unstable"):
        raise ConfigError(f"{cfg.path}: [slider] expect must be stable|unstable")
    if expect:
        for k, ratio, stable in sweep:
            if expect == "stable":
                report.check(f"k_{k:g}_stable", ratio, 1.0)
            else:
                inv = 1.0 / ratio if np.isfinite(ratio) and ratio > 0 else 0.0
                report.check(f"k_{k:g}_unstable", inv, 1.0)


def _run_fault(cfg, model, mesh, outdir, report, threads):
    """Coupled fault rupture run with the energy-balance audit."""
    _need_mesh(cfg, mesh)
    if not any(f.tag == "FAULT" for f in mesh.faces):
        raise ConfigError(f"{cfg.path}: fault run needs a FAULT interface")
    law = _friction_law(cfg)
    dofmap = DofMap(mesh)
    system = assemble(model, mesh, dofmap=dofmap, nthreads=threads)
    fault = fault_discretization(model, mesh, dofmap)

    fcfg = cfg.fault
    shear = float(fcfg.get("shear", 0.0))
    u0 = np.zeros(dofmap.n_u)
    if shear:
        # tangential shear ramp across the fault plane: u_y = shear (x - cx)
        lo, hi = float(np.min(mesh.nodes[:, 0])), float(np.max(mesh.nodes[:, 0]))
        nodal = np.zeros((mesh.n_nodes, 3))
        nodal[:, 1] = shear * (mesh.nodes[:, 0] - 0.5 * (lo + hi))
        u0 = dofmap.reduce_u(nodal)
    v0 = np.zeros(dofmap.n_u)

    V_init = fcfg.get("V_init")
    states = initial_fault_states(fault, law,
                                  V_init=None if V_init is None
                                  else float(V_init))
    dt = float(cfg.run.get("dt", 0.01))
    steps = int(cfg.run.get("steps", 100))
    rec = fault_evolve(system, fault, states, (u0, v0), dt, steps, law=law)

    X = mesh.nodes[fault.minus]
    rows = []
    every = int(cfg.run.get("record_every", 1))
    for k, t in enumerate(rec["t"]):
        if k % every and k != len(rec["t"]) - 1:
            continue
        for p in range(fault.n_points):
            rows.append((t, X[p, 0], X[p, 1], X[p, 2], rec["V_T"][k][p],
                         rec["psi"][k][p], rec["sigma_N"][k][p],
                         rec["tau_f"][k][p], rec["delta"][k][p]))
    _write_csv(outdir / "fault.csv",
               ("t", "x", "y", "z", "V_T", "psi", "sigma_N", "tau_f", "delta"),
               rows)
    report.outputs.append("fault.csv")
    _write_csv(outdir / "fault_energy.csv",
               ("t", "energy", "dissipated", "max_slip_rate"),
               np.column_stack([rec["t"], rec["energy"], rec["dissipated"],
                                rec["max_slip_rate"]]))
    report.outputs.append("fault_energy.csv")

    report.check("energy_balance", rec["balance_error"],
                 float(fcfg.get("balance_tol", 1e-8)))
    report.check("normal_stress_positive",
                 max(0.0, -float(np.min(rec["sigma_N"]))), 0.0)
    diss_inc = np.diff(rec["dissipated"])
    report.check("dissipation_monotone",
                 max(0.0, -float(np.min(diss_inc)) if len(diss_inc) else 0.0),
                 1e-12)
    report.note(f"peak slip rate {float(np.max(rec['max_slip_rate'])):.6e}, "
                f"dissipated {float(rec['dissipated'][-1]):.6e}")


_SUITES = (("check-tensors", "_run_check_tensors"),
           ("gravity", "_run_gravity"),
           ("assemble", "_run_assemble"),
           ("eigen", "_run_eigen"),
           ("evolve", "_run_evolve"),
           ("slider", "_run_slider"),
           ("fault", "_run_fault"))


def _suite_available(cfg, mesh, name):
    if name == "gravity":
        if _radial_model(cfg) is None:
            return "no radial density table"
    elif name in ("slider", "fault"):
        if cfg.friction is None:
            return "no [friction] table"
        if name == "fault" and (mesh is None or
                                not any(f.tag == "FAULT" for f in mesh.faces)):
            return "no FAULT interface"
    if name not in ("gravity", "slider") and mesh is None:
        return "no [mesh] table"
    return None


def _run_verify_all(cfg, model, mesh, outdir, report, threads):
    """Every suite the config supports, aggregated into one report."""
    for name, fn_name in _SUITES:
        why = _suite_available(cfg, mesh, name)
        if why is not None:
            report.note(f"{name}: skipped ({why})")
            continue
        subdir = Path(outdir) / name.replace("-", "_")
        subdir.mkdir(parents=True, exist_ok=True)
        n_checks, n_out = len(report.checks), len(report.outputs)
        globals()[fn_name](cfg, model, mesh, subdir, report, threads)
        for c in report.checks[n_checks:]:
            c.name = f"{name}.{c.name}"
        report.outputs[n_out:] = [f"{subdir.name}/{o}"
                                  for o in report.outputs[n_out:]]


_PIPELINES = {
    "check-tensors": _run_check_tensors,
    "gravity": _run_gravity,
    "assemble": _run_assemble,
    "eigen": _run_eigen,
    "evolve": _run_evolve,
    "slider": _run_slider,
    "fault": _run_fault,
    "verify-all": _run_verify_all,
}


def run(subcommand, config, out=None, threads=None):
    """Execute one pipeline; the report is returned and written to out/."""
    if subcommand not in _PIPELINES:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    if out is None:
        out = Path.cwd() / f"stratovar_{subcommand.replace('-', '_')}"
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    report = RunReport(command=subcommand, config=str(config))
    start = time.perf_counter()
    try:
        cfg = ModelConfig.from_file(config)
        mesh = model = None
        if cfg.mesh:
            mesh = _config_mesh(cfg)
            model = _build_model(cfg, mesh)
        _PIPELINES[subcommand](cfg, model, mesh, outdir, report, threads)
    except ConfigError:
        raise
    except (ValueError, np.linalg.LinAlgError) as e:
        # a pipeline failure is reported as a failing check, not a crash
        report.note(f"error: {e}")
        report.checks.append(Check("pipeline_error", float("inf"), 0.0, False))
    finally:
        report.wall_time = time.perf_counter() - start
        report.write(outdir)
    return report


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stratovar",
        description="deformation kernel runs driven by a single TOML config")
    parser.add_argument("subcommand", choices=sorted(_PIPELINES))
    parser.add_argument("--config", required=True, help="path to the config")
    parser.add_argument("--out", default=None, help="artifact directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="assembly threads (default STRATOVAR_THREADS)")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        env = os.environ.get("STRATOVAR_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                print(f"stratovar: bad STRATOVAR_THREADS {env!r}",
                      file=sys.stderr)
                return 2

    try:
        report = run(args.subcommand, args.config, out=args.out,
                     threads=threads)
    except ConfigError as e:
        print(f"stratovar: {e}", file=sys.stderr)
        return 2
    sys.stdout.write(report.render())
    if not report.passed:
        print(f"stratovar: failed checks: {', '.join(report.failed_names)}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
