"""Command line entry point: ``wfapprox {simulate,bounds,certify,verify}``.

Every subcommand reads a JSON experiment config (``--config``); ``--seed``,
``--workers`` and ``--out`` override the corresponding config entries. Exit
codes: 0 pass, 1 violation, 2 inconclusive, 64 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds, certify, chain, diffusion, pde1d
from .model import DomainError, MutationMatrix, covariance_hs_sup_grid, drift_norm_sup, num_lattice_states
from .testfuncs import TestFunction, quadratic_r3, scalar_derivative_sup, standard_family_r2

EXIT_PASS, EXIT_VIOLATION, EXIT_INCONCLUSIVE, EXIT_CONFIG = 0, 1, 2, 64
SCHEMA_VERSION = 1

_POLY = {
    "type": "object",
    "required": ["r", "terms"],
    "properties": {
        "r": {"type": "integer", "minimum": 2},
        "name": {"type": "string"},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["powers", "coeff"],
                "properties": {
                    "powers": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "coeff": {"type": "number"},
                },
            },
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {
            "type": "object",
            "required": ["r", "N", "mutation"],
            "properties": {
                "r": {"type": "integer", "minimum": 2},
                "N": {"type": "integer", "minimum": 1},
                "mutation": {
                    "oneOf": [
                        {
                            "type": "object",
                            "required": ["last_row", "outflow"],
                            "properties": {
                                "last_row": {"type": "array", "items": {"type": "number"}},
                                "outflow": {"type": "array", "items": {"type": "number"}},
                            },
                            "additionalProperties": False,
                        },
                        {
                            "type": "object",
                            "required": ["matrix"],
                            "properties": {
                                "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                            },
                            "additionalProperties": False,
                        },
                    ]
                },
            },
        },
        "initial_state": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer", "minimum": 0}},
                {"const": "all"},
            ]
        },
        "horizons": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "test_functions": {"type": "array", "items": {"oneOf": [_POLY, {"type": "string"}]}},
        "diffusion": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "replicates": {"type": "integer", "minimum": 2},
            },
        },
        "pde": {
            "type": "object",
            "properties": {
                "M": {"type": "integer", "minimum": 64},
                "dt_pde": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "state_cap": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": {"type": "integer", "minimum": 1},
        "output": {"type": "object", "properties": {"dir": {"type": "string"}}},
    },
}


class ConfigError(ValueError):
    pass


class Experiment:
    """A validated config with the model objects built."""

    def __init__(self, raw: dict, base: Path):
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config does not match the schema: {exc.message}") from None
        self.raw = raw
        m = raw["model"]
        self.r, self.N = m["r"], m["N"]
        mut = m["mutation"]
        try:
            if "matrix" in mut:
                self.U = MutationMatrix.from_matrix(mut["matrix"])
            else:
                self.U = MutationMatrix.from_rates(mut["last_row"], mut["outflow"])
        except DomainError as exc:
            raise ConfigError(f"invalid mutation matrix: {exc}") from None
        if self.U.r != self.r:
            raise ConfigError(f"mutation matrix has r={self.U.r} but model.r={self.r}")
        self.horizons = raw.get("horizons", [1, 5, 20])
        self.fs = self._test_functions(raw.get("test_functions"), base)
        init = raw.get("initial_state")
        if init == "all" and self.r != 2:
            raise ConfigError('initial_state "all" is only supported for two alleles')
        if init is None:
            init = "all" if self.r == 2 else [2 * self.N // self.r] * (self.r - 1)
        if init != "all":
            if len(init) != self.r - 1 or sum(init) > 2 * self.N:
                raise ConfigError(f"initial_state {init} is not a count vector of I_2N")
        self.initial_state = init
        d = raw.get("diffusion", {})
        try:
            self.dcfg = diffusion.DiffusionConfig(self.N, self.U, d.get("dt", 1.0 / 64))
            p = raw.get("pde", {})
            self.grid = pde1d.Grid1D(p.get("M", 1024), p.get("dt_pde", 1e-3))
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        self.replicates = d.get("replicates", 100_000)
        self.cap = raw.get("state_cap", chain.DEFAULT_STATE_CAP)
        self.seed = raw.get("seed")
        self.workers = raw.get("workers")
        self.out = Path(raw.get("output", {}).get("dir", "wfapprox-out"))

    def _test_functions(self, specs, base: Path) -> list[TestFunction]:
        if specs is None:
            if self.r == 2:
                return standard_family_r2()
            if self.r == 3:
                return [quadratic_r3()]
            return [TestFunction(self.r, {tuple(int(i == k) * 2 for i in range(self.r - 1)): 1.0
                                          for k in range(self.r - 1)}, name="sum-squares")]
        fs = []
        for i, s in enumerate(specs):
            if isinstance(s, str):
                path = (base / s) if not Path(s).is_absolute() else Path(s)
                if not path.exists():
                    raise ConfigError(f"test function file {path} does not exist")
                try:
                    s = json.loads(path.read_text())
                    jsonschema.validate(s, _POLY)
                except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                    raise ConfigError(f"bad test function file {path}: {exc}") from None
            try:
                f = TestFunction.from_dict(s)
            except (DomainError, KeyError) as exc:
                raise ConfigError(f"bad test function #{i}: {exc}") from None
            if f.r != self.r:
                raise ConfigError(f"test function #{i} has r={f.r}, model has r={self.r}")
            if not f.name:
                f = TestFunction(f.r, f.terms, f"f{i}")
            fs.append(f)
        return fs

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required for stochastic runs (config 'seed' or --seed)")
        return int(self.seed)

    def start_points(self) -> list:
        if self.initial_state == "all":
            return [[a] for a in range(2 * self.N + 1)]
        return [list(self.initial_state)]


def load_config(path, seed=None, workers=None, out=None) -> Experiment:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    if workers is not None:
        raw["workers"] = workers
    if out is not None:
        raw.setdefault("output", {})["dir"] = str(out)
    return Experiment(raw, path.parent)


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(exp: Experiment) -> int:
    """Chain and diffusion sample paths plus exact chain laws at each horizon."""
    seed = exp.require_seed()
    out = exp.out
    out.mkdir(parents=True, exist_ok=True)
    n_max = max(exp.horizons)
    written = []
    for k, start in enumerate(exp.start_points()):
        tag = f"_x{k}" if len(exp.start_points()) > 1 else ""
        alpha = np.array(start, dtype=np.int64)
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, 0]))
        p = out / f"chain_path{tag}.csv"
        chain.sample_path(alpha, exp.U, n_max, rng, exp.N).to_csv(p)
        written.append(p.name)
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, 1]))
        p = out / f"diffusion_path{tag}.csv"
        diffusion.simulate_path(alpha / (2 * exp.N), exp.dcfg, float(n_max), rng).to_csv(p)
        written.append(p.name)
        if num_lattice_states(exp.N, exp.r) <= exp.cap:
            dist = chain.ChainDistribution.point_mass(alpha, exp.N, exp.r)
            for n in sorted(set(exp.horizons)):
                p = out / f"chain_distribution{tag}_n{n}.csv"
                chain.evolve_distribution(dist, exp.U, n, exp.cap).to_csv(p)
                written.append(p.name)
    _dump({"seed": seed, "files": written}, out / "simulate.json")
    return EXIT_PASS


def bounds_report(exp: Experiment) -> dict:
    """All applicable bound regimes for every test function and horizon."""
    rows = []
    for f in exp.fs:
        norms = certify.bound_norms(f)
        for n in exp.horizons:
            entry = {"f": f.name, "n": n, "norms": norms.tolist()}
            if exp.r == 2:
                u12, u21 = float(exp.U.u[0, 1]), float(exp.U.u[1, 0])
                cor = bounds.total_bound(exp.U, exp.N, n, norms)
                norms6 = [scalar_derivative_sup(f, m) for m in range(1, 7)]
                en = bounds.en77_report(u12, u21, exp.N, n, norms6)
                entry["corollary"] = cor.to_dict()
                entry["en77"] = en.to_dict()
                entry["corollary_over_en77"] = cor.total / en.total if en.total > 0 else None
            else:
                entry["theorem"] = bounds.total_bound(exp.U, exp.N, n, norms).to_dict()
                hs = covariance_hs_sup_grid(exp.r, 200)[0]
                bs = drift_norm_sup(exp.U)[0]
                entry["theorem_with_exact_suprema"] = bounds.total_bound(
                    exp.U, exp.N, n, norms, hs_sup=hs, drift_sup=bs).to_dict()
            rows.append(entry)
    return {"N": exp.N, "r": exp.r, "reports": rows}


def cmd_bounds(exp: Experiment) -> int:
    _dump(bounds_report(exp), exp.out / "bounds.json")
    return EXIT_PASS


def cmd_certify(exp: Experiment) -> int:
    notes = []
    if exp.r == 2:
        u12, u21 = float(exp.U.u[0, 1]), float(exp.U.u[1, 0])
        x0s = None if exp.initial_state == "all" else [[a / (2 * exp.N)] for a in exp.initial_state]
        estimates = certify.certify_r2(exp.fs, exp.N, u12, u21, exp.horizons, x0s, exp.grid)
    else:
        seed = exp.require_seed()
        x0 = np.array(exp.initial_state) / (2 * exp.N)
        estimates, notes = certify.certify_r3(exp.fs, x0, exp.U, exp.N, exp.horizons, exp.dcfg,
                                              exp.replicates, seed, exp.workers, exp.cap)
    status = certify.overall_status(estimates)
    _dump({"status": status, "notes": notes, "seed": exp.seed,
           "estimates": [e.to_dict() for e in estimates]}, exp.out / "certify.json")
    certify.write_summary_csv(estimates, exp.out / "certify_summary.csv")
    return {certify.PASS: EXIT_PASS, certify.INCONCLUSIVE: EXIT_INCONCLUSIVE,
            certify.VIOLATION: EXIT_VIOLATION}[status]


def cmd_verify(exp: Experiment) -> int:
    if exp.r == 2:
        u12, u21 = float(exp.U.u[0, 1]), float(exp.U.u[1, 0])
        U_by_r = None
    else:
        u12 = u21 = 0.05
        U_by_r = {exp.r: exp.U}
    seed = 0 if exp.seed is None else int(exp.seed)
    report = certify.run_verification(exp.N, u12, u21, seed, U_by_r)
    _dump(report, exp.out / "verify.json")
    return EXIT_PASS if report["passed"] else EXIT_VIOLATION


COMMANDS = {"simulate": cmd_simulate, "bounds": cmd_bounds, "certify": cmd_certify, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfapprox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes for Monte Carlo")
        p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = load_config(args.config, args.seed, args.workers, args.out)
        code = COMMANDS[args.command](exp)
    except ConfigError as exc:
        print(f"wfapprox: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except chain.CapacityError as exc:
        print(f"wfapprox: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    labels = {EXIT_PASS: "pass", EXIT_VIOLATION: "violation", EXIT_INCONCLUSIVE: "inconclusive"}
    print(f"wfapprox {args.command}: {labels[code]} (output in {exp.out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
