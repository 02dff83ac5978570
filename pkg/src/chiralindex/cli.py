"""Command line driver: configured runs, sweeps, identity checks, decay and fractional-moment reports."""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from chiralindex import __version__
from chiralindex.clifford import clifford_identity_suite, key_identity_lhs, key_identity_rhs, random_simplex
from chiralindex.ensemble import METHODS, ROW_FIELDS, EnsembleSpec, run_points
from chiralindex.flatband import write_profile_csv
from chiralindex.localization import MIN_ENSEMBLE, fractional_moment_fit
from chiralindex.models import BUILTINS, builtin_model, load_model, realize

OUTPUT_ENV = "CHIRALINDEX_OUTPUT_DIR"
PARAM_ALIASES = {"lambda": "lam", "lambda_mass": "lam_mass"}

_number_or_range = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^-?[0-9.eE+-]+:-?[0-9.eE+-]+:[0-9.eE+-]+$"}]}

RUNCONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunConfig",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "L", "seed"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": sorted(BUILTINS)},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
                "file": {"type": "string"},
            },
            "oneOf": [{"required": ["name"]}, {"required": ["file"]}],
        },
        "L": {"type": "integer", "minimum": 2},
        "ensemble": {"type": "integer", "minimum": 1, "default": 1},
        "seed": {"type": "integer", "minimum": 0},
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1, "uniqueItems": True},
        "trunc_radius": {"type": "integer", "minimum": 1},
        "trace_region": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "flatband": {"enum": ["eigh", "svd", "contour"]},
        "kspace_grid": {"type": "integer", "minimum": 4},
        "x0": {"type": "array", "items": {"type": "number"}},
        "sweep": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["param", "values"],
                "properties": {
                    "param": {"type": "string"},
                    "values": {"oneOf": [{"type": "array", "items": {"type": "number"}}, _number_or_range]},
                },
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"gap": {"type": "number", "exclusiveMinimum": 0}},
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "decay": {"type": "boolean"},
                "fracmom": {"type": "boolean"},
                "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "E": {"type": "number"},
            },
        },
        "output_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
    },
}


class ConfigError(ValueError):
    pass


def parse_values(text) -> list[float]:
    """``"0:2:0.25"`` (inclusive start:stop:step), a comma list, a number, or a list of numbers."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(n, 0))]
    return [float(v) for v in text.split(",") if v.strip()]


def _line_of(text: str, path) -> int:
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(f'"{key}"', pos)
            if hit >= 0:
                pos = hit
    return text.count("\n", 0, pos) + 1


def validate_config(doc: dict, text: str | None = None) -> dict:
    """Schema check with one ``line N: path: message`` diagnostic per violation."""
    validator = jsonschema.Draft202012Validator(RUNCONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            prefix = f"line {_line_of(text, err.absolute_path)}: " if text is not None else ""
            lines.append(f"{prefix}{where}: {err.message}")
        raise ConfigError("invalid run config:\n  " + "\n  ".join(lines))
    return doc


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid run config:\n  line {exc.lineno}: {exc.msg}") from exc
    return validate_config(doc, text)


@dataclass
class RunConfig:
    model: dict
    L: int
    seed: int
    ensemble: int = 1
    methods: tuple[str, ...] = ("realspace",)
    trunc_radius: int | None = None
    trace_region: float = 0.5
    flatband: str = "eigh"
    kspace_grid: int = 256
    x0: tuple[float, ...] | None = None
    sweep: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    output_dir: str = "results"
    workers: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        validate_config(doc)
        kw = dict(doc)
        if "methods" in kw:
            kw["methods"] = tuple(kw["methods"])
        if "x0" in kw:
            kw["x0"] = tuple(kw["x0"])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["methods"] = list(self.methods)
        if self.x0 is not None:
            out["x0"] = list(self.x0)
        return out

    def config_hash(self) -> str:
        canon = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "workers")}
        return hashlib.sha256(json.dumps(canon, sort_keys=True).encode("utf-8")).hexdigest()

    def spec(self) -> EnsembleSpec:
        diag = self.diagnostics
        return EnsembleSpec(
            L=self.L,
            n_samples=self.ensemble,
            seed=self.seed,
            methods=tuple(self.methods),
            trunc_radius=self.trunc_radius,
            trace_region=self.trace_region,
            flatband=self.flatband,
            kspace_grid=self.kspace_grid,
            x0=self.x0,
            gap_tol=self.tolerances.get("gap", 1e-8),
            decay=bool(diag.get("decay", False)),
            fracmom=bool(diag.get("fracmom", False)),
            fracmom_s=diag.get("s", 0.5),
            fracmom_eta=diag.get("eta", 1e-3),
            fracmom_E=diag.get("E", 0.0),
        )

    def points(self):
        """Cartesian product of the sweep axes; no axes means a single point."""
        base = dict(self.model.get("params", {}))
        base = {PARAM_ALIASES.get(k, k): v for k, v in base.items()}
        axes = [(PARAM_ALIASES.get(ax["param"], ax["param"]), parse_values(ax["values"])) for ax in self.sweep]
        if axes and "file" in self.model:
            raise ConfigError("sweeps need a built-in model; a model file has fixed parameters")
        out = []
        for combo in itertools.product(*(vals for _, vals in axes)):
            params = dict(base)
            params.update({name: v for (name, _), v in zip(axes, combo)})
            if "file" in self.model:
                model = load_model(self.model["file"])
            else:
                try:
                    model = builtin_model(self.model["name"], **params)
                except TypeError as exc:
                    raise ConfigError(f"bad parameters for {self.model['name']}: {exc}") from exc
            out.append(({name: v for (name, _), v in zip(axes, combo)}, model))
        return out


def output_dir(cli_value: str | None, config_value: str | None = None) -> Path:
    """Command line flag, then the environment override, then the config, then ``results``."""
    chosen = cli_value or os.environ.get(OUTPUT_ENV) or config_value or "results"
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: Path, rows, fields=ROW_FIELDS) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_cell(row.get(f)) for f in fields])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def provenance(config: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "config": config.to_dict(),
    }


def execute(config: RunConfig, out: Path, command: str = "run") -> dict:
    """Run every sweep point and write ``results.csv``, ``summary.json`` and ``provenance.json``."""
    spec = config.spec()
    points = config.points()
    results = run_points(points, spec, workers=config.workers)
    rows = [row for res in results for row in res.rows]
    write_rows(out / "results.csv", rows)
    summary = {"points": [res.summary() for res in results], "n_rows": len(rows)}
    for i, res in enumerate(results):
        if res.decay is not None:
            res.decay.to_csv(out / f"decay_{i:03d}.csv")
        if res.fracmom is not None:
            with (out / f"fracmom_{i:03d}.csv").open("w", newline="", encoding="utf-8") as fh:
                write_profile_csv(fh, res.fracmom.profile)
    write_json(out / "summary.json", summary)
    write_json(out / "provenance.json", provenance(config, command))
    return summary


def _add_model_args(p, ensemble: bool = True):
    p.add_argument("--model", required=True, help=f"built-in model ({', '.join(sorted(BUILTINS))}) or a JSON model file")
    p.add_argument("--m", default=None, help="mass parameter: number, comma list or start:stop:step")
    p.add_argument("--lambda", dest="lam", default=None, help="disorder strength: number, list or range")
    p.add_argument("--lambda-mass", dest="lam_mass", default=None, help="mass disorder strength (defaults to --lambda)")
    p.add_argument("--L", type=int, required=True, help="linear torus size")
    if ensemble:
        p.add_argument("--ensemble", type=int, default=1, help="realizations per point")
        p.add_argument("--seed", type=int, required=True, help="master seed (mandatory)")
    p.add_argument("--flatband", choices=["eigh", "svd", "contour"], default="eigh")
    p.add_argument("--gap-tol", type=float, default=1e-8)
    p.add_argument("--out", default=None, help=f"output directory (overrides ${OUTPUT_ENV})")
    p.add_argument("--workers", type=int, default=1)


def _config_from_args(args, methods, diagnostics=None) -> RunConfig:
    if Path(args.model).suffix == ".json":
        model = {"file": args.model}
        sweep = []
    else:
        model = {"name": args.model, "params": {}}
        sweep = []
        for name in ("m", "lam", "lam_mass"):
            raw = getattr(args, name, None)
            if raw is None:
                continue
            vals = parse_values(raw)
            if len(vals) == 1:
                model["params"][name] = vals[0]
            else:
                sweep.append({"param": name, "values": vals})
    doc = {
        "model": model,
        "L": args.L,
        "seed": args.seed,
        "ensemble": args.ensemble,
        "methods": list(methods),
        "flatband": args.flatband,
        "tolerances": {"gap": args.gap_tol},
        "workers": args.workers,
    }
    if sweep:
        doc["sweep"] = sweep
    if getattr(args, "trunc_radius", None) is not None:
        doc["trunc_radius"] = args.trunc_radius
    if getattr(args, "trace_region", None) is not None:
        doc["trace_region"] = args.trace_region
    if getattr(args, "kspace_grid", None) is not None:
        doc["kspace_grid"] = args.kspace_grid
    if diagnostics:
        doc["diagnostics"] = diagnostics
    return RunConfig.from_dict(doc)


def cmd_run(args) -> int:
    config = RunConfig.from_dict(load_config(args.config))
    if args.workers is not None:
        config.workers = args.workers
    out = output_dir(args.out, config.output_dir)
    summary = execute(config, out, "run")
    print(f"wrote {summary['n_rows']} rows to {out}")
    return 0


def cmd_sweep(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    config = _config_from_args(args, methods)
    out = output_dir(args.out)
    summary = execute(config, out, "sweep")
    for point in summary["points"]:
        line = ", ".join(
            f"{meth}: mean {st['mean']:.4f} mode {st['mode']} ({st['mode_fraction']:.0%})"
            for meth, st in point["stats"].items()
            if st.get("n")
        )
        print(f"{point['params'] or 'single point'}: {line or 'no accepted samples'}; rejected {point['n_rejected']}")
    return 0


def cmd_verify(args) -> int:
    ok = True
    sampled = None if args.d <= 3 else args.words
    for check in clifford_identity_suite(args.d, n_sampled=sampled, seed=args.seed):
        ok &= check.passed
        print(f"{'PASS' if check.passed else 'FAIL'} clifford {check.name}: {check.n_cases} cases, max error {check.max_error:.2e}")
    if args.d in (1, 3) and args.trials > 0:
        rng = np.random.default_rng(args.seed)
        for t in range(args.trials):
            pts = random_simplex(rng, args.d)
            est = key_identity_lhs(pts, n_samples=args.samples, seed=args.seed + t + 1)
            rhs = key_identity_rhs(pts)
            err = abs(est.value - rhs)
            passed = err <= 3 * est.stderr and err / abs(rhs) < 0.02
            ok &= passed
            print(
                f"{'PASS' if passed else 'FAIL'} key identity trial {t}: lhs {est.value.real:+.5f}{est.value.imag:+.5f}i "
                f"rhs {rhs.real:+.5f}{rhs.imag:+.5f}i err/stderr {err / est.stderr:.2f} rel {err / abs(rhs):.2e}"
            )
    return 0 if ok else 1


def cmd_decay(args) -> int:
    config = _config_from_args(args, ["realspace"], {"decay": True})
    if len(config.points()) != 1:
        raise ConfigError("decay takes a single parameter point")
    out = output_dir(args.out)
    summary = execute(config, out, "decay")
    point = summary["points"][0]
    print(f"decay rate {point.get('decay_rate', float('nan'))}, rejected {point['n_rejected']}")
    return 0


def cmd_fracmom(args) -> int:
    if args.ensemble < MIN_ENSEMBLE:
        raise ConfigError(f"fracmom needs --ensemble >= {MIN_ENSEMBLE}")
    config = _config_from_args(args, ["realspace"], {"fracmom": True})
    (params, model), *rest = config.points()
    if rest:
        raise ConfigError("fracmom takes a single parameter point")
    samples = [realize(model, args.L, seed=args.seed, realization=r) for r in range(args.ensemble)]
    report = fractional_moment_fit(samples, E=args.E, s=args.s, eta=args.eta, robustness=args.robustness)
    out = output_dir(args.out)
    report.profile.to_csv(out / "fracmom.csv")
    write_json(out / "summary.json", {"params": model.params, "fracmom": report.summary()})
    write_json(out / "provenance.json", provenance(config, "fracmom"))
    verdict = "decaying" if report.decaying else "no exponential decay detected"
    print(f"beta_s = {report.beta:.4f} (R^2 {report.r_squared:.3f}): {verdict}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chiralindex", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a JSON run config")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="ensemble invariants over parameter ranges")
    _add_model_args(p)
    p.add_argument("--methods", default="realspace", help="comma list of kspace, realspace, fedosov")
    p.add_argument("--trunc-radius", type=int, default=None)
    p.add_argument("--trace-region", type=float, default=None)
    p.add_argument("--kspace-grid", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-identities", help="Clifford trace identities and the key geometric identity")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--trials", type=int, default=10, help="random simplices for the key identity (d = 1, 3)")
    p.add_argument("--samples", type=int, default=2_000_000, help="Monte Carlo samples per simplex")
    p.add_argument("--words", type=int, default=500, help="sampled generator words when d > 3")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("decay", help="flat-band off-diagonal decay profile")
    _add_model_args(p)
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("fracmom", help="fractional moments of the Green function")
    _add_model_args(p)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--E", type=float, default=0.0)
    p.add_argument("--robustness", action="store_true", help="refit at s = 0.3, 0.7 and at eta/2")
    p.set_defaults(func=cmd_fracmom)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
