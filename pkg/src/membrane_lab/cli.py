"""Command-line front end: ``membrane-lab {verify,reduce,transform,evolve,series,list}``.

Every command prints one JSON document on stdout.  Exit codes:
0 success, 1 residual gate failed, 2 configuration or role error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .evolve import BOUNDARY_MODES, EvolutionConfig, EvolutionError, evolve_entry, final_error, spatial_ladder
from . import perturb, reduction
from .catalog import CatalogEntry, CatalogError, get_entry, list_entries
from .exact import Pow2, to_str
from .grid import Field1, Field2, Grid1, Grid2, GridError
from .residual import (SOLUTION_TOL, NonFiniteResidualError, ResidualError, convergence_ladder,
                       residual)
from .transform import GateError, TransformError, TransformNumericalError, transform

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Validated options of one invocation."""

    command: str
    options: dict = field(default_factory=dict)

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace, allowed: set[str]) -> RunConfig:
        opts = {k: v for k, v in vars(ns).items() if k in allowed}
        if ns.config:
            try:
                data = json.loads(Path(ns.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
            unknown = set(data) - allowed
            if unknown:
                raise ConfigError(f"unknown config fields {sorted(unknown)}")
            # explicit flags win over the file
            for k, v in data.items():
                if opts.get(k) in (None, False, []):
                    opts[k] = v
        return cls(ns.command, opts)

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None


# --------------------------------------------------------------------------- helpers


def _params(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        for part in str(item).split(","):
            if not part.strip():
                continue
            key, sep, val = part.partition("=")
            if not sep:
                raise ConfigError(f"parameter {part!r} is not key=value")
            try:
                out[key.strip()] = float(Fraction(val.strip())) if "/" in val else float(val)
            except ValueError as exc:
                raise ConfigError(f"bad parameter value {part!r}") from exc
    return out


def _grid(text: str | None):
    if text is None:
        return None
    if "," not in text:
        bits = text.split(":")
        if len(bits) != 4:
            raise ConfigError(f"bad grid spec {text!r}")
        return Grid1.make(bits[0], float(bits[1]), float(bits[2]), int(bits[3]))
    return Grid2.parse(text)


def _entry(cfg: RunConfig) -> CatalogEntry:
    try:
        return get_entry(cfg.entry, **_params(cfg.param))
    except CatalogError as exc:
        raise ConfigError(str(exc)) from exc


def _load_file(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    header = text.split("\n", 1)[0].strip().split(",")
    if len(header) == 3 and header[1] == "value":
        prof = reduction.ProfileSamples.from_csv(text)
        h = np.diff(prof.x)
        if not np.allclose(h, h[0], rtol=1e-9):
            raise ConfigError("profile CSV must be uniformly spaced")
        grid = Grid1.make(prof.variable, prof.x[0], prof.x[-1], len(prof.x))
        return Field1(grid, prof.value)
    return Field2.from_csv(text)


def _source(cfg: RunConfig):
    if bool(cfg.entry) == bool(cfg.file):
        raise ConfigError("give exactly one of --entry or --file")
    return _entry(cfg) if cfg.entry else _load_file(cfg.file)


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return to_str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(report: dict, cfg: RunConfig | None, stream) -> None:
    text = json.dumps(report, default=_default, indent=2)
    stream.write(text + "\n")
    if cfg is not None:
        _write(cfg.options.get("json"), text + "\n")


# --------------------------------------------------------------------------- commands


def cmd_verify(cfg: RunConfig) -> tuple[int, dict]:
    source = _source(cfg)
    grid = _grid(cfg.grid)
    tol = cfg.tol if cfg.tol is not None else SOLUTION_TOL
    try:
        rep = residual(cfg.eq, source, grid, method=cfg.method)
    except NonFiniteResidualError as exc:
        raise NumericalFailure(str(exc)) from exc
    except (ResidualError, CatalogError, GridError) as exc:
        raise ConfigError(str(exc)) from exc
    out = rep.as_dict() | {"tol": tol, "passed": rep.passes(tol)}
    if cfg.ladder:
        lad = convergence_ladder(cfg.eq, source, grid)
        out["ladder"] = lad.as_dict()
        # sampled residuals are gated by their convergence, not their size
        out["passed"] = lad.passed if rep.method == "fd" else out["passed"] and lad.passed
    if cfg.out and rep.field is not None:
        g = grid or (source.default_grid if isinstance(source, CatalogEntry) else source.grid)
        f = Field2(g, rep.field) if isinstance(g, Grid2) else None
        if f is not None:
            _write(cfg.out, f.to_csv())
    return (EXIT_OK if out["passed"] else EXIT_GATE), out


def _transform_entry(cfg: RunConfig) -> CatalogEntry:
    entry = _entry(cfg)
    if entry.role != "R_of_tau_mu":
        try:
            # a level-set or hodograph name may have an R(tau, mu) twin
            alt = get_entry(entry.name + "-R", **_params(cfg.param))
        except CatalogError:
            raise ConfigError(f"transform needs an R(tau, mu) entry, {entry.name} has role {entry.role}")
        return alt
    return entry


def cmd_transform(cfg: RunConfig) -> tuple[int, dict]:
    if bool(cfg.entry) == bool(cfg.file):
        raise ConfigError("give exactly one of --entry or --file")
    source = _transform_entry(cfg) if cfg.entry else _load_file(cfg.file)
    if not isinstance(source, (CatalogEntry, Field2)):
        raise ConfigError("transform needs a two-dimensional radius field")
    try:
        res = transform(source, _grid(cfg.grid), _grid(cfg.target), fit=cfg.fit)
    except GateError as exc:
        return EXIT_GATE, {"error": str(exc), "passed": False}
    except TransformNumericalError as exc:
        raise NumericalFailure(str(exc)) from exc
    except (TransformError, GridError) as exc:
        raise ConfigError(str(exc)) from exc
    except perturb.ModeFitError as exc:
        raise NumericalFailure(str(exc)) from exc
    report = dict(res.report)
    conv = report.get("residual_of_Rstar")
    passed = report["newton_failures"] == 0
    if conv is not None and "passed" in conv:
        passed = passed and bool(conv["passed"])
    elif conv is not None:
        passed = passed and conv["max_relative"] <= (cfg.tol if cfg.tol is not None else 1e-3)
    report["passed"] = passed
    if cfg.out and res.rstar is not None:
        _write(cfg.out, res.rstar.to_csv())
    return (EXIT_OK if passed else EXIT_GATE), report


def cmd_evolve(cfg: RunConfig) -> tuple[int, dict]:
    entry = _entry(cfg) if cfg.entry else None
    base = {}
    if cfg.evolution:
        try:
            base = EvolutionConfig.from_json(Path(cfg.evolution).read_text()).to_dict()
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad evolution config: {exc}") from exc
    if cfg.grid:
        g = _grid(cfg.grid)
        if not isinstance(g, Grid1) or g.names != ("mu",):
            raise ConfigError("evolve takes a one-axis grid 'mu:lo:hi:n'")
        base.update(mu_lo=g.axis.lo, mu_hi=g.axis.hi, n=g.axis.n)
    if cfg.tau:
        try:
            t0, t1 = (float(v) for v in cfg.tau.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad --tau {cfg.tau!r}, expected t0:t1") from exc
        base.update(tau0=t0, tau1=t1)
    for key in ("step", "boundary", "safety"):
        if cfg.options.get(key) is not None:
            base[key] = cfg.options[key]
    try:
        config = EvolutionConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if entry is None:
        raise ConfigError("evolve needs --entry for its initial data")
    if entry.role != "R_of_tau_mu":
        raise ConfigError(f"evolve needs an R(tau, mu) entry, {entry.name} has role {entry.role}")
    tol = cfg.tol if cfg.tol is not None else 1e-6
    try:
        run = evolve_entry(entry, config)
        err = final_error(entry, run)
        report = run.report() | {"entry": entry.name, "final_error": err, "tol": tol}
        passed = err <= tol
        if cfg.ladder:
            lad = spatial_ladder(entry, config)
            report["ladder"] = lad.as_dict()
    except (EvolutionError, CatalogError) as exc:
        raise NumericalFailure(str(exc)) from exc
    report["passed"] = passed
    if cfg.out:
        _write(cfg.out, run.field.to_csv())
    return (EXIT_OK if passed else EXIT_GATE), report


def series_report(alpha, beta, delta) -> dict:
    """Star, double star and level-set data of one mode."""
    mode = perturb.Mode(Fraction(alpha), Fraction(beta), perturb.amplitude_from_str(str(delta)))
    if not mode.valid:
        raise ConfigError(f"({alpha}, {beta}) violates the mode constraint")
    s1 = perturb.star(mode)
    s2 = perturb.star(s1.mode)
    ratio = s2.delta * Pow2(1 / mode.delta.factor, -mode.delta.exponent)
    report = {
        "mode": mode.as_dict(),
        "star": s1.as_dict(),
        "double_star": s2.as_dict(),
        "double_star_over_delta": ratio.to_str(),
        "level_set": perturb.level_set_form(mode).as_dict(),
        "level_set_star": perturb.level_set_form(s1.mode).as_dict(),
        "double_star_ratio": None,
        "identities": None,
    }
    try:
        report["double_star_ratio"] = to_str(perturb.double_star_ratio(mode.alpha, mode.beta))
    except perturb.PerturbError:
        pass
    try:
        ids = perturb.auxiliary_identities(mode.alpha, mode.beta)
        report["identities"] = {k: [to_str(a), to_str(b)] for k, (a, b) in ids.items()}
    except perturb.PerturbError:
        pass
    return report


def cmd_series(cfg: RunConfig) -> tuple[int, dict]:
    try:
        return EXIT_OK, series_report(cfg.alpha, cfg.beta, cfg.delta)
    except (perturb.PerturbError, ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _spec(cfg: RunConfig) -> reduction.ReductionSpec:
    p = _params(cfg.param)
    fam = cfg.family
    try:
        if fam == "F":
            return reduction.ReductionSpec.F(_frac(p, "alpha"), _frac(p, "beta"))
        if fam == "T":
            return reduction.ReductionSpec.T(_frac(p, "A"), _frac(p, "B"))
        if fam == "H":
            return reduction.ReductionSpec.H(_frac(p, "a"), _frac(p, "b"))
        if fam == "graph":
            return reduction.ReductionSpec.graph()
    except reduction.ReductionError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown family {fam!r}; expected F, T, H or graph")


def _frac(p: dict, key: str) -> Fraction:
    if key not in p:
        raise ConfigError(f"family needs --param {key}=...")
    return Fraction(p[key]).limit_denominator(10**6)


def cmd_reduce(cfg: RunConfig) -> tuple[int, dict]:
    if cfg.ansatz:
        if cfg.ansatz not in ("plus", "minus"):
            raise ConfigError("--ansatz takes plus or minus")
        fams = reduction.ansatz_coefficients(cfg.ansatz, source=cfg.conditions)
        return EXIT_OK, {"form": cfg.ansatz, "conditions": cfg.conditions,
                         "families": [f.to_dict() for f in fams]}
    if not cfg.family:
        raise ConfigError("reduce needs --family or --ansatz")
    spec = _spec(cfg)
    tol = cfg.tol if cfg.tol is not None else SOLUTION_TOL
    if cfg.profile:
        g = _grid(cfg.grid)
        if not isinstance(g, Grid1):
            raise ConfigError("a profile expression needs a one-axis --grid 'x:lo:hi:n'")
        prof = reduction.analytic_profile(cfg.profile, g.points, variable=g.axis.name,
                                          **_params(cfg.profile_param))
        if cfg.out:
            _write(cfg.out, prof.to_csv())
    elif cfg.entry:
        prof = _entry(cfg)
        if prof.role != "profile_1d":
            raise ConfigError(f"{prof.name} is not a one-variable profile")
    elif cfg.file:
        prof = _load_file(cfg.file)
        if not isinstance(prof, Field1):
            raise ConfigError("reduce needs a profile CSV")
    else:
        raise ConfigError("reduce needs --profile, --entry or --file")
    try:
        err = reduction.ode_residual(spec, prof, relative=True)
    except reduction.ReductionError as exc:
        raise NumericalFailure(str(exc)) from exc
    passed = err <= tol
    return (EXIT_OK if passed else EXIT_GATE), {"spec": spec.to_dict(), "max_relative": err,
                                                "tol": tol, "passed": passed}


def cmd_list(cfg: RunConfig) -> tuple[int, dict]:
    return EXIT_OK, {"entries": [{"name": n, "role": r, "paper_eq": e} for n, r, e in list_entries()]}


# --------------------------------------------------------------------------- parser


_COMMANDS = {"verify": cmd_verify, "transform": cmd_transform, "evolve": cmd_evolve,
             "series": cmd_series, "reduce": cmd_reduce, "list": cmd_list}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="membrane-lab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, source=True):
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("--json", help="also write the report to this path")
        p.add_argument("--tol", type=float)
        if source:
            p.add_argument("--entry")
            p.add_argument("--param", action="append", default=[], metavar="K=V")
            p.add_argument("--out", help="CSV side file")

    p = sub.add_parser("verify", help="residual of a catalog entry or sampled field")
    common(p)
    p.add_argument("--file")
    p.add_argument("--eq", required=False)
    p.add_argument("--grid")
    p.add_argument("--method", choices=("analytic", "fd"), default="analytic")
    p.add_argument("--ladder", action="store_true", help="add an FD convergence ladder")

    p = sub.add_parser("transform", help="solution-generating transformation")
    common(p)
    p.add_argument("--file")
    p.add_argument("--grid")
    p.add_argument("--target")
    p.add_argument("--fit", action="store_true")

    p = sub.add_parser("evolve", help="method-of-lines evolution")
    common(p)
    p.add_argument("--grid", help="'mu:lo:hi:n'")
    p.add_argument("--tau", help="'t0:t1'")
    p.add_argument("--step", type=float)
    p.add_argument("--safety", type=float)
    p.add_argument("--boundary", choices=BOUNDARY_MODES)
    p.add_argument("--evolution", help="EvolutionConfig JSON file")
    p.add_argument("--ladder", action="store_true", help="add the 65/129/257 spatial ladder")

    p = sub.add_parser("series", help="exact mode algebra")
    common(p, source=False)
    p.add_argument("--alpha")
    p.add_argument("--beta")
    p.add_argument("--delta", default="1")

    p = sub.add_parser("reduce", help="reduced ODEs and the ansatz solver")
    common(p)
    p.add_argument("--file")
    p.add_argument("--family", choices=("F", "T", "H", "graph"))
    p.add_argument("--profile", help="closed-form profile in sympy syntax")
    p.add_argument("--profile-param", action="append", default=[], metavar="K=V")
    p.add_argument("--grid")
    p.add_argument("--ansatz", choices=("plus", "minus"))
    p.add_argument("--conditions", choices=("reference", "derived"), default="reference")

    p = sub.add_parser("list", help="catalog entries")
    common(p, source=False)
    return parser


def _allowed(parser: argparse.ArgumentParser, command: str) -> set[str]:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest for a in sub.choices[command]._actions if a.dest not in ("help", "config")}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    cfg = None
    try:
        cfg = RunConfig.from_namespace(ns, _allowed(parser, ns.command))
        if ns.command == "verify" and not cfg.eq:
            raise ConfigError("verify needs --eq")
        if ns.command == "series" and (cfg.alpha is None or cfg.beta is None):
            raise ConfigError("series needs --alpha and --beta")
        code, report = _COMMANDS[ns.command](cfg)
    except (ConfigError, GridError) as exc:
        code, report = EXIT_CONFIG, {"error": str(exc), "kind": "config"}
    except NumericalFailure as exc:
        code, report = EXIT_NUMERIC, {"error": str(exc), "kind": "numerical"}
    report = {"command": ns.command, "exit_code": code, **report}
    _emit(report, cfg, stdout)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
