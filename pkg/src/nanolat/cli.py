"""Configuration parsing and experiment orchestration.

Configs are flat YAML mappings with a fixed key set; unknown keys are
rejected and defaults are echoed into every output header, so a result
file always records the full effective configuration.  All experiments
are deterministic for a given (config, seed): repeated runs produce
byte-identical CSV files.

Exit codes: 0 success, 1 config error, 2 lattice construction error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import inversion_cost, orientation_profile, rigidity_probe
from .energy import EnergyModel, LoadSpec, load_value, total_energy
from .lattice import (Lattice, LatticeConstructionError, StructureMatrix,
                      build_box_lattice, build_dislocated_lattice,
                      build_strip_lattice, max_bond_reach)
from .optimize import OptimizeOptions
from .transitions import (DEFAULT_M_SCHEDULE, boundary_gamma, g2_csv_rows,
                          g2_estimate, gamma_table, scaling_csv_rows,
                          scaling_study)


class ConfigError(Exception):
    """Invalid configuration text or semantics."""


EXPERIMENTS = ("gamma-table", "scaling", "g2", "inversion-cost",
               "rigidity-probe", "forces-demo", "boundary-gamma")
KINDS = ("strip", "kuhn-box", "hexagonal", "fcc", "bcc", "dislocated")


@dataclass
class ExperimentConfig:
    experiment: str = "gamma-table"
    kind: str = "strip"
    n: int = 2
    k: int = 2
    half_length: float = 8.0
    mismatch: float = 1.0
    rho: float = 1.0
    p: float = 2.0
    c1: float = 1.0
    c2: float = 1.0
    tol: float = 1e-8
    max_iters: int = 10000
    restarts: int = 3
    seed: int = 0
    threads: int = 1
    m_schedule: list = field(default_factory=lambda: list(DEFAULT_M_SCHEDULE))
    k_list: list = field(default_factory=lambda: [2, 4, 8])
    t_list: list = field(default_factory=lambda: [4, 8, 16])
    nu: list = field(default_factory=lambda: [1.0, 0.0])
    pair: str = "I,lI"
    sample_count: int = 1000
    flip_point: float = 0.0
    bisect_rel: float = 0.01
    boundary_eps: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    export_deformation: bool = False
    chunk_size: int = 0

    def structure_matrix(self) -> np.ndarray:
        return StructureMatrix.from_kind(
            self.kind if self.kind in ("hexagonal", "fcc", "bcc") else "identity",
            self.n).entries

    def model(self) -> EnergyModel:
        return EnergyModel(p=self.p, c1=self.c1, c2=self.c2,
                           mismatch=self.mismatch, h=self.structure_matrix())

    def optimizer(self) -> OptimizeOptions:
        return OptimizeOptions(tol=self.tol, max_iters=self.max_iters,
                               restarts=self.restarts, seed=self.seed)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            key = _KEY_BY_FIELD[f.name]
            out[key] = getattr(self, f.name)
        return out


# config keys use the paper-facing names (lambda, L); dataclass fields avoid
# the Python keyword clash
_FIELD_BY_KEY = {
    "experiment": "experiment", "kind": "kind", "N": "n", "k": "k",
    "L": "half_length", "lambda": "mismatch", "rho": "rho", "p": "p",
    "c1": "c1", "c2": "c2", "tol": "tol", "max_iters": "max_iters",
    "restarts": "restarts", "seed": "seed", "threads": "threads",
    "M_schedule": "m_schedule", "k_list": "k_list", "T_list": "t_list",
    "nu": "nu", "pair": "pair", "sample_count": "sample_count",
    "flip_point": "flip_point", "bisect_rel": "bisect_rel",
    "boundary_eps": "boundary_eps", "export_deformation": "export_deformation",
    "chunk_size": "chunk_size",
}
_KEY_BY_FIELD = {v: k for k, v in _FIELD_BY_KEY.items()}

_INT_KEYS = {"N", "k", "max_iters", "restarts", "seed", "threads",
             "sample_count", "chunk_size"}
_FLOAT_KEYS = {"L", "lambda", "rho", "p", "c1", "c2", "tol",
               "flip_point", "bisect_rel"}
_LIST_KEYS = {"M_schedule", "k_list", "T_list", "nu", "boundary_eps"}
_BOOL_KEYS = {"export_deformation"}


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or int(value) != float(value):
                raise ValueError
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _LIST_KEYS:
            return [float(v) for v in value]
        if key in _BOOL_KEYS:
            if not isinstance(value, bool):
                raise ValueError
            return value
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError("config key %r has invalid value %r" % (key, value)) from None


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment must be one of %s, got %r"
                          % (", ".join(EXPERIMENTS), cfg.experiment))
    if cfg.kind not in KINDS:
        raise ConfigError("kind must be one of %s, got %r" % (", ".join(KINDS), cfg.kind))
    if cfg.n < 2:
        raise ConfigError("N must be >= 2")
    if cfg.kind == "hexagonal" and cfg.n != 2 or cfg.kind in ("fcc", "bcc") and cfg.n != 3:
        raise ConfigError("kind %r requires N=%d" % (cfg.kind, 2 if cfg.kind == "hexagonal" else 3))
    if cfg.kind == "dislocated" and cfg.n != 2:
        raise ConfigError("dislocated lattices require N=2")
    if not (0.0 < cfg.mismatch <= 1.0):
        raise ConfigError("lambda must lie in (0, 1]")
    if not (0.0 < cfg.rho <= 1.0):
        raise ConfigError("rho must lie in (0, 1]")
    if cfg.p <= 1:
        raise ConfigError("p must exceed 1")
    if cfg.c1 <= 0 or cfg.c2 <= 0:
        raise ConfigError("c1 and c2 must be positive")
    if cfg.k < 1:
        raise ConfigError("k must be >= 1")
    if cfg.pair not in ("I,J", "lI,lJ", "I,lI", "I,lJ"):
        raise ConfigError("pair must be one of I,J lI,lJ I,lI I,lJ")
    cfg.m_schedule = [int(m) for m in cfg.m_schedule]
    cfg.k_list = [int(v) for v in cfg.k_list]
    cfg.t_list = [int(v) for v in cfg.t_list]
    if len(cfg.nu) != cfg.n:
        raise ConfigError("nu must have N components")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML configuration, applying defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = " at line %d" % (mark.line + 1) if mark is not None else ""
        raise ConfigError("config syntax error%s: %s" % (where, exc)) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values")
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key not in _FIELD_BY_KEY:
            raise ConfigError("unknown config key %r" % key)
        setattr(cfg, _FIELD_BY_KEY[key], _coerce(key, value))
    return _validate(cfg)


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=True,
                          width=10 ** 6).strip()


def config_header(cfg: ExperimentConfig, note: str = "") -> list[str]:
    lines = ["# nanolat %s" % __version__,
             "# config: %s" % serialize_config(cfg)]
    if note:
        lines.append("# %s" % note)
    return lines


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

def _write(path: Path, lines: list[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _build_lattice(cfg: ExperimentConfig) -> Lattice:
    h = cfg.structure_matrix()
    if cfg.kind == "dislocated":
        return build_dislocated_lattice(cfg.rho, cfg.k, cfg.half_length,
                                        mismatch=cfg.mismatch)
    if cfg.kind == "kuhn-box":
        side = int(2 * cfg.half_length) + 1
        return build_box_lattice(cfg.n, [side] * cfg.n, max_bond_reach(cfg.n), h=h)
    return build_strip_lattice(cfg.n, cfg.k, int(cfg.half_length), cfg.mismatch, h=h)


def _export_deformation(path: Path, u: np.ndarray) -> Path:
    lines = ["%d %s" % (i, " ".join("%.12g" % c for c in row))
             for i, row in enumerate(u)]
    return _write(path, lines)


def run_gamma_table(cfg: ExperimentConfig, out: Path) -> list[Path]:
    tab = gamma_table(cfg.k, cfg.model(), cfg.optimizer(), tuple(cfg.m_schedule))
    lines = config_header(cfg, "gamma values are estimates (upper bounds to the infima)")
    lines.append("pair,k,M,value,converged,restarts")
    lines.extend(tab.csv_rows())
    lines.append("# min(I.lI, I.lJ) = %.12g (winner %s)" % (tab.min_hetero, tab.hetero_winner))
    paths = [_write(out / "gamma.csv", lines)]
    if cfg.export_deformation:
        for name, entry in tab.entries.items():
            safe = name.replace(",", "_")
            paths.append(_export_deformation(out / ("deformation_%s.txt" % safe),
                                             entry.final.u))
            prof = orientation_profile(entry.final.lattice, entry.final.u, cfg.model())
            plines = config_header(cfg)
            plines.append("slab_start,slab_end,label,mean_dist_rot,mean_dist_refl")
            plines.extend(prof.csv_rows())
            paths.append(_write(out / ("profile_%s.csv" % safe), plines))
    return paths


def run_scaling(cfg: ExperimentConfig, out: Path) -> list[Path]:
    dislocated = cfg.kind == "dislocated"
    rows = scaling_study(cfg.k_list, cfg.model(), cfg.pair, cfg.optimizer(),
                         tuple(cfg.m_schedule), dislocated=dislocated,
                         rho=cfg.rho if dislocated else None)
    note = ("dislocated interface: values scale linearly in k" if dislocated
            else "estimates are upper bounds; folding bound column in header comments")
    lines = config_header(cfg, note)
    for r in rows:
        if r.folding_bound is not None:
            lines.append("# folding_upper_bound k=%d: %.12g" % (r.k, r.folding_bound))
    lines.append("k,value,value_per_k^{N-1},value_per_k^N")
    lines.extend(scaling_csv_rows(rows))
    return [_write(out / "scaling.csv", lines)]


def run_g2(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows = g2_estimate(cfg.nu, cfg.t_list, cfg.model(), cfg.optimizer())
    lines = config_header(cfg, "Dirichlet-box estimates of the interfacial density")
    for r in rows:
        lines.append("# pure test-function value T=%d: %.12g" % (r.t, r.pure_value))
    lines.append("nu,T,estimate")
    lines.extend(g2_csv_rows(cfg.nu, rows))
    return [_write(out / "g2.csv", lines)]


def run_inversion_cost(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rep = inversion_cost(cfg.structure_matrix(), cfg.p, cfg.restarts, cfg.seed)
    lines = config_header(cfg, "empirical two-simplex inversion cost")
    lines.append("pair_index,value")
    for i, v in enumerate(rep.per_pair):
        lines.append("%d,%.12g" % (i, v))
    lines.append("# C0_hat = %.12g (feasible %d/%d runs, seed %d)"
                 % (rep.value, rep.feasible_runs, rep.total_runs, rep.seed))
    return [_write(out / "inversion_cost.csv", lines)]


def run_rigidity_probe(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rep = rigidity_probe(cfg.structure_matrix(), cfg.p, cfg.sample_count, cfg.seed)
    lines = config_header(cfg, "empirical well-distance/cell-energy comparison constant")
    lines.append("c_hat,samples,skipped")
    lines.append("%.12g,%d,%d" % (rep.c_hat, rep.samples, rep.skipped))
    lines.append("# argmax F = %s" % " ".join("%.12g" % v for v in rep.argmax_f.ravel()))
    return [_write(out / "rigidity.csv", lines)]


def folded_competitors(cfg: ExperimentConfig):
    """The two explicit competitor deformations of the sign-flipping load
    demo: the rigid state and the state folded at the flip point."""
    lattice = build_strip_lattice(cfg.n, cfg.k, int(cfg.half_length), 1.0,
                                  h=np.eye(cfg.n))
    unfolded = lattice.coords.copy()
    folded = lattice.coords.copy()
    right = lattice.coords[:, 0] > cfg.flip_point
    folded[right, -1] = -folded[right, -1]
    return lattice, unfolded, folded


def _demo_loads(cfg: ExperimentConfig, amplitude: float) -> LoadSpec:
    a = cfg.flip_point

    def radial_last(x1, _a=a, _amp=amplitude):
        f = np.zeros(cfg.n)
        f[-1] = _amp if x1 < _a else -_amp
        return f

    radial = [None] * (cfg.n - 2) + [radial_last]
    return LoadSpec(tangential=np.zeros(cfg.n), radial=radial)


def run_forces_demo(cfg: ExperimentConfig, out: Path) -> list[Path]:
    """Bracket the load amplitude at which folding becomes favourable.

    Evaluates the two explicit competitors exactly (no global search): the
    rigid deformation and the one folded at the flip point.  Above the
    crossing the folded total is lower; below it is higher.  The crossing
    is bracketed by bisection to the requested relative width.
    """
    if cfg.mismatch != 1.0:
        raise ConfigError("forces-demo assumes the homogeneous wire (lambda = 1)")
    model = cfg.model()
    lattice, unfolded, folded = folded_competitors(cfg)
    seam = total_energy(lattice, folded, model)

    def totals(amp):
        loads = _demo_loads(cfg, amp)
        g_unf = total_energy(lattice, unfolded, model) - load_value(lattice, unfolded, loads)
        g_fol = seam - load_value(lattice, folded, loads)
        return g_fol, g_unf

    lo, hi = 0.0, 1.0
    while totals(hi)[0] >= totals(hi)[1]:
        hi *= 2.0
        if hi > 1e9:
            raise ConfigError("no folding crossover found up to amplitude 1e9")
    while (hi - lo) > cfg.bisect_rel * max(hi, 1e-30):
        mid = 0.5 * (lo + hi)
        g_fol, g_unf = totals(mid)
        if g_fol < g_unf:
            hi = mid
        else:
            lo = mid

    lines = config_header(cfg, "sign-flipping radial load: folded vs unfolded competitor totals")
    lines.append("amplitude,folded_total,unfolded_total")
    for amp in (lo, hi):
        g_fol, g_unf = totals(amp)
        lines.append("%.12g,%.12g,%.12g" % (amp, g_fol, g_unf))
    lines.append("# crossover bracketed in [%.12g, %.12g] (seam energy %.12g)"
                 % (lo, hi, seam))
    return [_write(out / "forces.csv", lines)]


def run_boundary_gamma(cfg: ExperimentConfig, out: Path) -> list[Path]:
    model = cfg.model()
    h = model.h
    rng = np.random.default_rng(cfg.seed)
    sym = rng.standard_normal((cfg.n, cfg.n))
    sym = 0.5 * (sym + sym.T)
    sym /= np.linalg.norm(sym)
    tab = gamma_table(cfg.k, EnergyModel(p=cfg.p, c1=cfg.c1, c2=cfg.c2,
                                         mismatch=1.0, h=h),
                      cfg.optimizer(), tuple(cfg.m_schedule))
    lines = config_header(cfg, "boundary-datum transition costs and the folding barrier")
    lines.append("eps,value,two_sided_sum,below_barrier")
    for eps in cfg.boundary_eps:
        b = h + float(eps) * sym
        entry = boundary_gamma(b, np.eye(cfg.n), cfg.k, model, cfg.optimizer(),
                               tuple(cfg.m_schedule))
        two_sided = 2.0 * entry.value
        lines.append("%.12g,%.12g,%.12g,%s" % (eps, entry.value, two_sided,
                                               str(two_sided < tab.gamma_ij).lower()))
    lines.append("# gamma(I,J;k) barrier = %.12g" % tab.gamma_ij)
    return [_write(out / "boundary_gamma.csv", lines)]


def run_export_lattice(cfg: ExperimentConfig, out: Path) -> list[Path]:
    lattice = _build_lattice(cfg)
    return [_write(out / "lattice.txt", lattice.export_text().splitlines())]


_RUNNERS = {
    "gamma-table": run_gamma_table,
    "scaling": run_scaling,
    "g2": run_g2,
    "inversion-cost": run_inversion_cost,
    "rigidity-probe": run_rigidity_probe,
    "forces-demo": run_forces_demo,
    "boundary-gamma": run_boundary_gamma,
}


def run_experiment(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Dispatch one experiment; returns the written file paths."""
    out = Path(out_dir)
    return _RUNNERS[cfg.experiment](cfg, out)


# --------------------------------------------------------------------------
# Command line
# --------------------------------------------------------------------------

_SUBCOMMANDS = {
    "gamma": "gamma-table",
    "scaling": "scaling",
    "g2": "g2",
    "inversion-cost": "inversion-cost",
    "rigidity-probe": "rigidity-probe",
    "forces-demo": "forces-demo",
    "boundary-gamma": "boundary-gamma",
    "export-lattice": None,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nanolat",
        description="Lattice transition-energy experiments for heterogeneous nanowires")
    parser.add_argument("--version", action="version", version="nanolat " + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML config file")
    common.add_argument("--out", type=str, default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--max-iters", type=int, default=None)
    common.add_argument("--restarts", type=int, default=None)
    common.add_argument("--N", type=int, default=None)
    common.add_argument("--k", type=int, default=None)
    common.add_argument("--L", type=float, default=None)
    common.add_argument("--lambda", dest="lam", type=float, default=None)
    common.add_argument("--rho", type=float, default=None)
    common.add_argument("--p", type=float, default=None)
    common.add_argument("--kind", type=str, default=None)
    common.add_argument("--pair", type=str, default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


_OVERRIDES = (("seed", "seed"), ("threads", "threads"), ("tol", "tol"),
              ("max_iters", "max_iters"), ("restarts", "restarts"),
              ("N", "n"), ("k", "k"), ("L", "half_length"), ("lam", "mismatch"),
              ("rho", "rho"), ("p", "p"), ("kind", "kind"), ("pair", "pair"))


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError("cannot read config file: %s" % exc) from None
        cfg = parse_config(text)
    else:
        cfg = ExperimentConfig()
    experiment = _SUBCOMMANDS[args.command]
    if experiment is not None:
        cfg.experiment = experiment
    for arg_name, field_name in _OVERRIDES:
        value = getattr(args, arg_name)
        if value is not None:
            setattr(cfg, field_name, value)
    return _validate(cfg)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "export-lattice":
            paths = run_export_lattice(cfg, Path(args.out))
        else:
            paths = run_experiment(cfg, Path(args.out))
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except LatticeConstructionError as exc:
        print("construction error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("io error: %s" % exc, file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
