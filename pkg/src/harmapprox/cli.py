"""Command-line driver.

Every subcommand reads one JSON config (``--config``), lets flags override
its keys, and writes deterministic CSV/JSON artifacts into ``--out``.

Exit codes: 0 ok, 2 config error, 3 solver failure, 4 invariant failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import carleson, coeffs, cubes, heat, laplace, mmspace, multiscale
from .functions import FAMILIES, make_function

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "space": {"kind": "grid2d", "nx": 17, "ny": 17},
    "function": {"family": "bump", "params": {}},
    "cubes": {"rho": 0.5, "shifts": 4},
    "variants": ["H-trace", "H-exact", "Hosc", "Omega", "Hrcd"],
    "lambdas": [3.0],
    "heat": {"s_decades": 4, "s_points": 9},
    "depth": None,
    "seed": 0,
    "threads": 1,
    "out": ".",
    "format": "json",
}


class ConfigError(ValueError):
    def __init__(self, message, code="config"):
        super().__init__(message)
        self.code = code


@dataclass
class ExperimentConfig:
    space: dict
    function: dict
    cubes: dict
    variants: list
    lambdas: list
    heat: dict
    depth: int | None = None
    seed: int = 0
    threads: int = 1
    out: str = "."
    format: str = "json"
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        merged = copy.deepcopy(DEFAULT_CONFIG)
        for key, val in doc.items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **val} if key != "space" else val
            else:
                merged[key] = val
        known = {k: merged.pop(k) for k in list(merged) if k in cls.__dataclass_fields__}
        cfg = cls(**known, extra=merged)
        cfg.validate()
        return cfg

    def validate(self):
        if "kind" not in self.space:
            raise ConfigError("space.kind is required")
        if self.function.get("family") not in FAMILIES:
            raise ConfigError(f"unknown function family {self.function.get('family')!r}")
        for v in self.variants:
            if v not in coeffs.VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if not self.lambdas or any(float(l) < 1 for l in self.lambdas):
            raise ConfigError("lambdas must be >= 1")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if int(self.threads) < 1:
            raise ConfigError("threads must be >= 1")
        rho = float(self.cubes.get("rho", 0.5))
        if not 0 < rho < 1:
            raise ConfigError("cubes.rho must lie in (0, 1)")


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, reproducible generator per module."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# ------------------------------------------------------------------ plumbing

def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _load_space(args, cfg: ExperimentConfig) -> mmspace.MetricMeasureSpace:
    if getattr(args, "space", None):
        return mmspace.space_from_json(Path(args.space).read_text())
    params = {k: v for k, v in cfg.space.items() if k != "kind"}
    try:
        return mmspace.build_space(cfg.space["kind"], **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_system(args, cfg, space) -> cubes.CubeSystem:
    if getattr(args, "cubes", None):
        return cubes.cube_system_from_json(space, Path(args.cubes).read_text())
    return cubes.build_cube_system(space, rho=float(cfg.cubes.get("rho", 0.5)))


def _function(cfg, space) -> np.ndarray:
    params = dict(cfg.function.get("params", {}))
    if cfg.function["family"] == "lacunary":
        params.setdefault("seed", int(cfg.seed))
    try:
        return make_function(space, cfg.function["family"], **params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _check_variants(space, variants):
    for v in variants:
        if v == "Hrcd" and (space.grid_shape is None or space.embedding is None
                            or len(space.grid_shape) != 2):
            raise ConfigError("Hrcd requires a 2-D grid space", code="incompatible-variant")
        if v == "Omega" and (space.embedding is None or space.metric_kind != "euclidean"):
            raise ConfigError("Omega requires a Euclidean embedding", code="incompatible-variant")


# --------------------------------------------------------------- subcommands

def cmd_gen_space(args, cfg):
    space = _load_space(args, cfg)
    _write(Path(cfg.out), "space.json", mmspace.space_to_json(space) + "\n")
    return {"vertices": space.n, "edges": int(space.edges.shape[0]),
            "mass": math.fsum(space.measure), "diam": space.diam}


def cmd_build_cubes(args, cfg):
    space = _load_space(args, cfg)
    system = _load_system(args, cfg, space)
    rep = cubes.validate_cube_system(system)
    _write(Path(cfg.out), "cubes.json", cubes.cube_system_to_json(system) + "\n")
    summary = {"levels": [system.k_min, system.k_max], "cubes": system.num_cubes,
               "partition": all(rep.partition_ok), "nesting": rep.nesting_ok,
               "radius": rep.radius_ok, "achieved_c0": rep.achieved_c0,
               "overlap": {str(a): v for a, v in rep.overlap.items()},
               "overlap_bounded": {str(a): v for a, v in rep.overlap_bounded.items()},
               "failures": rep.failures}
    _write(Path(cfg.out), "cubes-validation.json", _dump_json(summary))
    return summary


def cmd_coeffs(args, cfg):
    space = _load_space(args, cfg)
    _check_variants(space, cfg.variants)
    system = _load_system(args, cfg, space)
    f = _function(cfg, space)
    rows = []
    for lam in cfg.lambdas:
        for q in range(system.num_cubes):
            B = mmspace.ball(space, int(system.center[q]), float(lam) * system.ell(q))
            recs = coeffs.coefficients(space, B, f, cfg.variants)
            for v in cfg.variants:
                r = recs[v]
                rows.append([q, int(system.level_of[q]), int(B.center), B.radius, float(lam), v,
                             r.value, r.terms["approx"], r.terms["osc"], r.terms["hess"],
                             r.candidate])
    header = ["cube", "level", "center", "radius", "lambda", "variant", "value", "approx",
              "osc", "hess", "candidate"]
    _write(Path(cfg.out), "coeffs.csv", _csv(rows, header))
    return {"rows": len(rows)}


def cmd_carleson(args, cfg):
    space = _load_space(args, cfg)
    system = _load_system(args, cfg, space)
    f = _function(cfg, space)
    variant = cfg.extra.get("carleson_variant", "H-trace")
    _check_variants(space, [variant])
    reports = []
    for lam in cfg.lambdas:
        rep = carleson.discrete_carleson(system, f, float(lam), variant,
                                         root=int(system.roots[0]), threads=int(cfg.threads))
        reports.append(rep.to_dict())
    out = Path(cfg.out)
    if cfg.format == "csv":
        rows = [[r["params"]["lambda"], int(k), v] for r in reports
                for k, v in r["perLevel"].items()]
        _write(out, "carleson.csv", _csv(rows, ["lambda", "level", "sum"]))
    _write(out, "carleson.json", _dump_json({"reports": reports}))
    return {"ratios": [r["ratios"] for r in reports]}


def cmd_replace(args, cfg):
    space = _load_space(args, cfg)
    system = _load_system(args, cfg, space)
    f = _function(cfg, space)
    seq = multiscale.replacement_sequence(space, system, None, f, cfg.depth)
    rows = [[k, r, d, e] for k, r, d, e in zip(seq.levels, seq.scale_lengths,
                                                seq.per_level_deficit, seq.energy_ladder)]
    out = Path(cfg.out)
    _write(out, "replace.csv", _csv(rows, ["level", "scale", "deficit", "energy"]))
    total, en, ratio = multiscale.telescoping_report(seq)
    summary = {"pythagoras": multiscale.pythagoras_check(seq),
               "discreteCont": multiscale.discrete_cont_residual(seq),
               "sumDeficits": total, "energy": en, "ratio": ratio}
    _write(out, "replace.json", _dump_json(summary))
    return summary


def _s_grid(cfg, decomp):
    h = cfg.heat
    if "s_grid" in h:
        return [float(s) for s in h["s_grid"]]
    top = 1.0 / decomp.eigenvalues[-1]
    dec = float(h.get("s_decades", 4))
    return list(np.geomspace(top * 10 ** -dec, top, int(h.get("s_points", 9))))


def cmd_heat(args, cfg):
    space = _load_space(args, cfg)
    system = _load_system(args, cfg, space)
    f = _function(cfg, space)
    decomp = heat.decompose(space, modes=cfg.heat.get("modes"))
    ts = heat.default_time_grid(decomp)[::8]
    sg = heat.semigroup_checks(decomp, f, ts)
    sg.pop("H2")
    sg.pop("times")
    tel = heat.telescope_check(decomp, f)
    lam = float(cfg.heat.get("lambda", 6.0))
    gb = heat.gradient_bound_report(space, system, f, _s_grid(cfg, decomp), lam=lam,
                                    decomp=decomp, threads=int(cfg.threads))
    summary = {"semigroup": sg, "telescope": asdict(tel), "gradientBound": gb.to_dict()}
    _write(Path(cfg.out), "heat.json", _dump_json(summary))
    return {"telescopeRatio": tel.ratio, "gradientBoundMax": gb.max_ratio}


# -------------------------------------------------------------------- verify

def _verify_suite(cfg) -> dict:
    """Fast invariant suite over small spaces. Returns ``{name: (ok, value)}``."""
    rng = substream(cfg.seed, "verify")
    res = {}

    def check(name, ok, value):
        res[name] = {"ok": bool(ok), "value": value}

    p3 = mmspace.build_space("path", n=3)
    check("mmspace.path3", np.allclose(p3.measure, 1 / 3) and
          abs(p3.distances_from(0)[2] - 1) < 1e-12, float(p3.distances_from(0)[2]))
    spaces = {"path": mmspace.build_space("path", n=65),
              "grid": mmspace.build_space("grid2d", nx=17, ny=17),
              "torus": mmspace.build_space("torus2d", nx=12, ny=12),
              "sphere": mmspace.build_space("sphere-mesh", n=200)}
    systems = {}
    for name, sp_ in spaces.items():
        S = cubes.build_cube_system(sp_)
        systems[name] = S
        rep = cubes.validate_cube_system(S, overlap_A=(3,))
        check(f"cubes.{name}.partition", rep.ok and all(rep.partition_ok)
              and rep.nesting_ok and rep.radius_ok, rep.failures)
        check(f"cubes.{name}.c0", rep.achieved_c0 >= 0.01, rep.achieved_c0)
        res[f"recorded.cubes.{name}.overlap3"] = {"ok": None, "value": rep.overlap[3]}
    g = spaces["grid"]
    worst_p = worst_o = 0.0
    for _ in range(20):
        f = rng.standard_normal(g.n)
        B = mmspace.ball(g, int(rng.integers(g.n)), float(rng.uniform(0.15, 0.5)))
        h = laplace.trace_solution(g, B.members, f)
        e = lambda u: laplace.energy(g, u, B.members)
        worst_p = max(worst_p, abs(e(f) - e(h.values) - e(f - h.values)) / e(f))
        worst_o = max(worst_o, abs(laplace.bilinear(g, h.values, f - h.values, B.members)) / e(f))
    check("laplace.pythagoras", worst_p <= 1e-9, worst_p)
    check("laplace.orthogonality", worst_o <= 1e-9, worst_o)
    worst = 0.0
    for _ in range(20):
        f = rng.standard_normal(g.n)
        B = mmspace.ball(g, int(rng.integers(g.n)), float(rng.uniform(0.15, 0.5)))
        r = coeffs.coefficients(g, B, f)
        v = {k: r[k].value for k in r}
        worst = max(worst, v["H-exact"] - v["H-trace"], v["H-exact"] - v["Hosc"],
                    v["Hrcd"] - v["Omega"])
    check("coeffs.orderings", worst <= 1e-12, worst)
    S = systems["grid"]
    f = make_function(g, "bump")
    seq = multiscale.replacement_sequence(g, S, None, f)
    py = multiscale.pythagoras_check(seq)
    check("multiscale.pythagoras", py <= 1e-9, py)
    dc = multiscale.discrete_cont_residual(seq)
    check("multiscale.discrete_cont", dc <= 1e-10, dc)
    lad = np.diff(seq.energy_ladder + [seq.root_energy])
    check("multiscale.ladder", bool(np.all(lad >= -1e-10 * seq.root_energy)), seq.energy_ladder)
    pou = multiscale.partition_of_unity(g, S, S.k_min + 2)
    check("multiscale.partition", pou.partition_error <= 1e-12, pou.partition_error)
    D = heat.decompose(g)
    fr = rng.standard_normal(g.n)
    sg = heat.semigroup_checks(D, fr, np.geomspace(1e-4, 1e-1, 4))
    check("heat.H1", sg["H1"] <= 1e-10, sg["H1"])
    check("heat.contraction", sg["H3_contraction"] <= 1 + 1e-12, sg["H3_contraction"])
    check("heat.repA", sg["repA"] <= 1e-10, sg["repA"])
    tel = heat.telescope_check(D, fr)
    res["recorded.heat.telescope_ratio"] = {"ok": None, "value": tel.ratio}
    return res


def cmd_verify(args, cfg):
    res = _verify_suite(cfg)
    _write(Path(cfg.out), "verify.json", _dump_json(res))
    failed = [k for k, v in res.items() if v["ok"] is False]
    for k in sorted(res):
        mark = {True: "PASS", False: "FAIL", None: "INFO"}[res[k]["ok"]]
        print(f"{mark} {k}")
    if failed:
        raise InvariantFailure(failed)
    return {"checks": len(res), "failed": failed}


class InvariantFailure(RuntimeError):
    pass


def cmd_report(args, cfg):
    out = Path(cfg.out)
    summary = {}
    for p in sorted(out.glob("*.json")):
        if p.name == "report.json":
            continue
        summary[p.stem] = json.loads(p.read_text())
    for p in sorted(out.glob("*.csv")):
        with p.open() as fh:
            summary[p.stem + ".csv"] = {"rows": sum(1 for _ in fh) - 1}
    _write(out, "report.json", _dump_json(summary))
    return {"files": sorted(summary)}


COMMANDS = {
    "gen-space": cmd_gen_space,
    "build-cubes": cmd_build_cubes,
    "coeffs": cmd_coeffs,
    "carleson": cmd_carleson,
    "replace": cmd_replace,
    "heat": cmd_heat,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--threads", type=int, help="worker cap for per-cube sweeps")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["csv", "json"], help="tabular output format")
    common.add_argument("--space", help="space JSON written by gen-space")
    common.add_argument("--cubes", help="cube JSON written by build-cubes")
    p = argparse.ArgumentParser(prog="harmapprox",
                                description="Harmonic approximation coefficients on finite spaces.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("seed", "threads", "out", "format"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    return ExperimentConfig.from_dict(doc)


def _error(code, message, status):
    sys.stderr.write(json.dumps({"error": code, "message": message}, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        summary = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _error(exc.code, str(exc), EXIT_CONFIG)
    except ValueError as exc:
        # invalid parameters surfacing from the numerical modules
        return _error("invalid-input", str(exc), EXIT_CONFIG)
    except laplace.SolverError as exc:
        return _error("solver", str(exc), EXIT_SOLVER)
    except InvariantFailure as exc:
        return _error("invariant", ", ".join(exc.args[0]), EXIT_INVARIANT)
    sys.stdout.write(_dump_json(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
