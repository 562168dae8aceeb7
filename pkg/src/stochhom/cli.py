"""Command-line experiment runner.

Every subcommand resolves its parameters from built-in defaults, then an
optional JSON ``--config`` file, then explicit flags, validates them, runs, and
writes a self-describing report (JSON, or CSV with ``#`` header lines carrying
the resolved config). Exit codes: 0 success, 2 invalid input, 3 solver failure,
4 enumeration capacity exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .ensembles import (CapacityError, EllipticityError, enumerate_observable, load_ensemble,
                        sample_field, functional_inequality_from_table, sgp_constant, product_constants)
from .fourier import (MULTIPLIER_KINDS, MultiplierSpec, check_cz_parameters, cz_ladder, decomposition_defect,
                      eval_multiplier, helmholtz_identity_check, multiplier_identity_defect)
from .green import decay_profile, defects_to_csv, DegenerateProfileError, WeightedSumReport, weighted_gradient_sum
from .lattice import TorusGrid, field_to_csv, gradient
from .moments import SCHEMA_VERSION, estimate_moments, samples_to_csv, scaling_study
from .solver import CorrectorProblem, SolverError, default_size, solve_corrector, solve_green

SUBCOMMANDS = ("corrector", "green", "weighted-sum", "helmholtz", "multiplier", "cz-check", "moments",
               "scaling", "ineq-check")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CAPACITY = 0, 2, 3, 4

DEFAULT_ENSEMBLE = {
    "corrector": "two_state_nonsymmetric", "green": "constant", "weighted-sum": "two_state_nonsymmetric",
    "helmholtz": "antisymmetric_perturbation", "moments": "two_state_nonsymmetric",
    "scaling": "two_state_nonsymmetric", "ineq-check": "two_state_diagonal",
}


class ValidationError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    subcommand: str
    dim: int = 2
    size: Optional[int] = None
    T: Optional[float] = None
    T_ladder: Optional[list] = None
    lam: Optional[float] = None
    xi: Optional[list] = None
    ensemble: Optional[str] = None
    samples: int = 10
    p: Optional[list] = None
    q: float = 1.1
    gamma: list = field(default_factory=lambda: [0.0])
    tol: float = 1e-10
    seed: int = 0
    jobs: int = 1
    out: Optional[str] = None
    format: str = "json"
    sizes: list = field(default_factory=lambda: [16, 32, 64])
    multiplier: str = "M_T"
    mode: str = "SG"

    def resolved(self) -> "ExperimentConfig":
        """Fill defaults that depend on other fields."""
        c = ExperimentConfig(**asdict(self))
        if c.T is None and c.subcommand not in ("scaling", "weighted-sum", "cz-check"):
            c.T = 16.0 if c.subcommand == "ineq-check" else 64.0
        if c.T_ladder is None and c.subcommand in ("scaling", "weighted-sum"):
            c.T_ladder = [c.T] if c.T is not None else [16.0, 64.0, 256.0, 1024.0]
        if c.p is None:
            c.p = [2] if c.subcommand == "cz-check" else [1, 2]
        if c.xi is None:
            c.xi = [1.0] + [0.0] * (c.dim - 1)
        if c.ensemble is None:
            c.ensemble = DEFAULT_ENSEMBLE.get(c.subcommand)
        if c.size is None and c.subcommand == "ineq-check":
            c.size = 2
        return c

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise ValidationError(f"unknown subcommand {self.subcommand!r}")
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.size is not None and self.size < 2:
            raise ValidationError(f"size must be >= 2, got {self.size}")
        for T in ([self.T] if self.T is not None else []) + list(self.T_ladder or []):
            if not T >= 1:
                raise ValidationError(f"T must be >= 1, got {T}")
        if self.T_ladder is not None and any(b <= a for a, b in zip(self.T_ladder, self.T_ladder[1:])):
            raise ValidationError(f"T ladder must be strictly increasing, got {self.T_ladder}")
        if self.lam is not None and not 0 < self.lam <= 1:
            raise ValidationError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.xi is not None and len(self.xi) != self.dim:
            raise ValidationError(f"xi has {len(self.xi)} components but dim={self.dim}")
        if self.samples < 1:
            raise ValidationError(f"samples must be >= 1, got {self.samples}")
        if self.subcommand in ("moments", "scaling") and self.samples < 2:
            raise ValidationError("moment estimates need samples >= 2")
        if not self.tol > 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        if self.q < 1:
            raise ValidationError(f"q must be >= 1, got {self.q}")
        if self.format not in ("json", "csv"):
            raise ValidationError(f"format must be json or csv, got {self.format!r}")
        if self.multiplier not in MULTIPLIER_KINDS:
            raise ValidationError(f"multiplier must be one of {MULTIPLIER_KINDS}")
        if self.mode not in ("SG", "LSI", "SGp"):
            raise ValidationError(f"mode must be SG, LSI or SGp, got {self.mode!r}")
        if self.subcommand == "cz-check":
            try:
                for g in self.gamma:
                    check_cz_parameters(self.dim, float(self.p[0]), float(g))
            except ValueError as exc:
                raise ValidationError(str(exc)) from exc
            if any(L < 8 for L in self.sizes):
                raise ValidationError("cz-check sizes must be >= 8")

    def grid_for(self, T: float) -> TorusGrid:
        return TorusGrid(self.dim, self.size or default_size(T))

    def ensemble_spec(self):
        try:
            return load_ensemble(self.ensemble, self.dim, self.lam)
        except (EllipticityError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"ensemble: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands; each returns (result dict, csv text)

def _corrector(c: ExperimentConfig):
    spec = c.ensemble_spec()
    grid = c.grid_for(c.T)
    a = sample_field(spec, grid, c.seed)
    rep = solve_corrector(CorrectorProblem(tuple(c.xi), c.T, spec.lam, grid), a, tol=c.tol)
    phi = rep.solution
    res = {"L": grid.L, "residual": rep.residual, "iterations": rep.iterations,
           "sup_ratio": rep.info["sup_ratio"], "phi0": float(phi.flat[0]), "phi": phi.ravel().tolist()}
    return res, field_to_csv(phi)


def _green(c: ExperimentConfig):
    spec = c.ensemble_spec()
    grid = c.grid_for(c.T)
    a = sample_field(spec, grid, c.seed)
    rep = solve_green(a, c.T, tol=c.tol)
    res = {"L": grid.L, "row_sum": rep.info["row_sum"], "row_sum_error": abs(rep.info["row_sum"] - c.T),
           "residual": rep.residual, "iterations": rep.iterations}
    csv_text = "r,max_value\n"
    if grid.L >= 16:
        try:
            fit = decay_profile(rep.solution, "gradient", c.T)
            res["decay"] = {"exponent": fit.exponent, "rate": fit.rate, "residual": fit.residual,
                            "window": list(fit.window), "profile": fit.profile}
            csv_text = fit.to_csv()
        except DegenerateProfileError as exc:
            res["decay"] = {"error": str(exc)}
    return res, csv_text


def _weighted_sum(c: ExperimentConfig):
    spec = c.ensemble_spec()
    rows, out = [], []
    for k, T in enumerate(c.T_ladder):
        grid = c.grid_for(T)
        vals = [weighted_gradient_sum(sample_field(spec, grid, c.seed, (k, i)), T, c.q, c.tol).value
                for i in range(c.samples)]
        rep = WeightedSumReport(c.q, T, float(np.mean(vals)), vals)
        out.append({"T": T, "L": grid.L, "mean": rep.mean, "max": rep.max, "values": vals,
                    "mean_over_log_T": rep.mean / np.log(T) if T > 1 else None})
        rows.append(rep.to_csv().split("\n", 1)[1])
    means = [o["mean"] for o in out]
    res = {"q": c.q, "ladder": out, "max_min_ratio": max(means) / min(means) if min(means) > 0 else None}
    if c.dim == 2 and all(T > 1 for T in c.T_ladder):
        r = [o["mean_over_log_T"] for o in out]
        res["log_T_ratio_spread"] = max(r) / min(r)
    return res, "sample_id,q,T,value\n" + "".join(rows)


def _helmholtz(c: ExperimentConfig):
    spec = c.ensemble_spec()
    grid = c.grid_for(c.T)
    checks = [helmholtz_identity_check(sample_field(spec, grid, c.seed, (i,)), c.T, tol=c.tol)
              for i in range(c.samples)]
    defects = [ch["defect"] for ch in checks]
    return {"L": grid.L, "defects": defects, "max_defect": max(defects), "bound": 100 * c.tol}, defects_to_csv(defects)


def _multiplier(c: ExperimentConfig):
    rng = np.random.default_rng(c.seed)
    xi = rng.uniform(-np.pi, np.pi, size=(c.samples, c.dim))
    rows, res = ["j,l,T,identity_defect,decomposition_defect,max_abs"], []
    for j in range(c.dim):
        for l in range(c.dim):
            vals = eval_multiplier(MultiplierSpec(c.multiplier, j, l, c.T), xi)
            e1 = multiplier_identity_defect(xi, j, l, c.T)
            e2 = decomposition_defect(xi, j, l, c.T)
            res.append({"j": j, "l": l, "identity_defect": e1, "decomposition_defect": e2,
                        "max_abs": float(np.abs(vals).max())})
            rows.append(f"{j},{l},{c.T!r},{e1!r},{e2!r},{float(np.abs(vals).max())!r}")
    return {"kind": c.multiplier, "points": c.samples, "entries": res}, "\n".join(rows) + "\n"


def _cz(c: ExperimentConfig):
    p = float(c.p[0])
    out, rows = [], ["gamma,L,T,max_ratio,trials"]
    for g in c.gamma:
        lad = cz_ladder(c.dim, c.sizes, p, float(g), c.samples, c.seed, T=c.T)
        out.append({"gamma": float(g), "max_ratios": lad["max_ratios"], "slope": lad["slope"],
                    "relative_slope": lad["relative_slope"]})
        for r in lad["reports"]:
            rows.append(f"{float(g)!r},{r.L},{float(r.T)!r},{r.max_ratio!r},{len(r.ratios)}")
    return {"p": p, "ladders": out}, "\n".join(rows) + "\n"


def _moments(c: ExperimentConfig):
    spec = c.ensemble_spec()
    grid = c.grid_for(c.T)
    rep = estimate_moments(spec, CorrectorProblem(tuple(c.xi), c.T, spec.lam, grid), c.samples, c.seed,
                           [int(p) for p in c.p], c.jobs, True, c.tol)
    return rep.to_dict(), samples_to_csv([rep])


def _scaling(c: ExperimentConfig):
    spec = c.ensemble_spec()
    rep = scaling_study(spec, c.xi, c.T_ladder, c.samples, c.seed, [int(p) for p in c.p], c.jobs,
                        size=c.size, tol=c.tol)
    return rep.to_dict(), samples_to_csv(rep.moments)


def _ineq(c: ExperimentConfig):
    spec = c.ensemble_spec()
    grid = c.grid_for(c.T)
    problem = CorrectorProblem(tuple(c.xi), c.T, spec.lam, grid)
    origin = (0,) * grid.d
    if c.mode == "SGp":
        observable = lambda a: solve_corrector(problem, a, tol=c.tol).solution[origin]
    else:
        observable = lambda a: gradient(solve_corrector(problem, a, tol=c.tol).solution)[(0,) + origin] + c.xi[0]
    values, probs = enumerate_observable(spec, grid, observable)
    if c.mode == "SGp":
        res = {"mode": "SGp", "entries": [sgp_constant(values, probs, float(p)) for p in c.p]}
        rows = ["p,lhs,rhs,constant"] + [f"{e['p']!r},{e['lhs']!r},{e['rhs']!r},{e['constant']!r}"
                                         for e in res["entries"]]
    else:
        rep = functional_inequality_from_table(values, probs, c.mode)
        res = rep.as_dict()
        rho = product_constants(spec).get(c.mode)
        if rho is not None:
            res["reference_rho"] = rho
            res["holds_at_rho"] = bool(rep.holds(rho))
        rows = ["mode,lhs,rhs,ratio,oscillation_sum",
                f"{rep.mode},{rep.lhs!r},{rep.rhs!r},{rep.ratio!r},{rep.oscillation_sum!r}"]
    res["configurations"] = int(values.size)
    return res, "\n".join(rows) + "\n"


HANDLERS = {"corrector": _corrector, "green": _green, "weighted-sum": _weighted_sum, "helmholtz": _helmholtz,
            "multiplier": _multiplier, "cz-check": _cz, "moments": _moments, "scaling": _scaling,
            "ineq-check": _ineq}


# ---------------------------------------------------------------------------
# argument handling

def _floats(text: str) -> list:
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochhom", description="Experiments on the modified corrector equation.")
    parser.add_argument("--version", action="version", version=f"stochhom {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        # defaults are None so that only explicit flags override the config file
        sp.add_argument("--config", help="JSON file with parameter values")
        sp.add_argument("--dim", type=int, default=None)
        sp.add_argument("--size", type=int, default=None, help="torus side L (default max(16, 4 ceil(sqrt T)))")
        sp.add_argument("--T", type=float, default=None)
        sp.add_argument("--T-ladder", dest="T_ladder", type=_floats, default=None)
        sp.add_argument("--lambda", dest="lam", type=float, default=None)
        sp.add_argument("--xi", type=_floats, default=None)
        sp.add_argument("--ensemble", default=None, help="preset name, inline JSON or JSON file")
        sp.add_argument("--samples", type=int, default=None)
        sp.add_argument("--p", type=_floats, default=None)
        sp.add_argument("--q", type=float, default=None)
        sp.add_argument("--gamma", type=_floats, default=None)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--format", choices=("json", "csv"), default=None)
        sp.add_argument("--sizes", type=_ints, default=None, help="L ladder for cz-check")
        sp.add_argument("--multiplier", default=None)
        sp.add_argument("--mode", default=None, help="SG, LSI or SGp for ineq-check")
    return parser


_CONFIG_ALIASES = {"lambda": "lam", "T-ladder": "T_ladder"}


def config_from_args(argv) -> ExperimentConfig:
    args = vars(build_parser().parse_args(argv))
    values: dict = {}
    if args.get("config"):
        try:
            data = json.loads(Path(args["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"config file: {exc}") from exc
        known = {f.name for f in fields(ExperimentConfig)}
        for k, v in data.items():
            k = _CONFIG_ALIASES.get(k, k)
            if k not in known or k == "subcommand":
                raise ValidationError(f"unknown config key {k!r}")
            if k == "ensemble" and isinstance(v, dict):
                v = json.dumps(v)
            values[k] = v
    for k, v in args.items():
        if k not in ("config", "subcommand") and v is not None:
            values[k] = v
    try:
        cfg = ExperimentConfig(subcommand=args["subcommand"], **values)
        if cfg.p is not None:
            cfg.p = [int(v) if float(v) == int(v) else float(v) for v in cfg.p]
        if cfg.T_ladder is not None:
            cfg.T_ladder = [float(v) for v in cfg.T_ladder]
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    return cfg


def render(cfg: ExperimentConfig, result: dict, csv_text: str) -> str:
    # the output path is a destination, not a parameter; leaving it out keeps reruns byte-identical
    config = {k: v for k, v in asdict(cfg).items() if k != "out"}
    header = {"version": __version__, "schema_version": SCHEMA_VERSION, "seed": cfg.seed, "config": config}
    if cfg.format == "json":
        return json.dumps({**header, "subcommand": cfg.subcommand, "result": result}, indent=2, sort_keys=True,
                          default=float) + "\n"
    lines = [f"# {k}={json.dumps(v, sort_keys=True)}" for k, v in header.items()]
    return "\n".join(lines) + "\n" + csv_text


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv).resolved()
        cfg.validate()
        result, csv_text = HANDLERS[cfg.subcommand](cfg)
    except ValidationError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EllipticityError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CapacityError as exc:
        print(f"error: capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except SolverError as exc:
        print(f"error: solver: {exc} (replay with --seed {cfg.seed})", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    text = render(cfg, result, csv_text)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        stdout.write(text)
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())
