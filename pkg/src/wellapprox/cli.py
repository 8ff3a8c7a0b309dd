"""Command-line front end.

Every subcommand reads one JSON config, writes its artifacts to ``--out`` and
maps library errors to exit codes (2 config, 3 unsupported psi, 4 degenerate
scale, 5 search cap, 6 verification mismatch).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .approx_core import (
    convergence_hypothesis,
    estimate_exponent,
    fourier_dimension,
    hausdorff_dimension,
    instance_from_dict,
    lattice_cube,
)
from .divisors import scale_set_Q_prime, scriptM_member
from .errors import ConfigError, OracleMismatch, WellApproxError
from .measure_builder import build_measure, decay_report, membership_census, write_decay_csv, write_stage_json
from .slab_verify import (
    LebesgueMeasure,
    SlabFamily,
    lattice_lemma_check,
    plane_fourier_many,
    plane_fourier_oracle_grid,
    write_lattice_csv,
)
from .torus_spectrum import (
    default_order,
    fm_spectral_tail,
    fm_spectrum,
    make_bspline_bump,
    verify_FM_bounds,
    write_spectrum_csv,
)

THREADS_ENV = "WELLAPPROX_THREADS"

_section = lambda props: {"type": "object", "properties": props, "additionalProperties": False}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["instance"],
    "additionalProperties": False,
    "properties": {
        "instance": {"type": "object"},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "bump": _section({"K": {"type": "integer", "minimum": 2}, "c": {"type": "number"}}),
        "dims": _section(
            {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "radii": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            }
        ),
        "spectrum": _section(
            {
                "M": {"type": "number", "minimum": 2},
                "Lambda": {"type": "integer", "minimum": 1},
                "method": {"enum": ["scatter", "divisor"]},
                "min_abs": {"type": "number", "minimum": 0},
                "include_zero": {"type": "boolean"},
            }
        ),
        "build": _section(
            {
                "k_max": {"type": "integer", "minimum": 1},
                "k_cap": {"type": "integer", "minimum": 1},
                "witness_radius": {"type": "integer", "minimum": 4},
                "census_samples": {"type": "integer", "minimum": 1},
                "decay_shells": {"type": "integer", "minimum": 1},
            }
        ),
        "verify_fm": _section(
            {
                "above_exp": {"type": "integer", "minimum": 1},
                "count": {"type": "integer", "minimum": 1},
                "zeta": {"type": "number", "exclusiveMinimum": 0.6931471805599453, "exclusiveMaximum": 1},
                "lambda_factor": {"type": "integer", "minimum": 1},
                "k_cap": {"type": "integer", "minimum": 1},
            }
        ),
        "verify_lattice": _section(
            {
                "measure": {"enum": ["lebesgue"]},
                "samples": {"type": "integer", "minimum": 1},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "N": {"type": "number", "exclusiveMinimum": 0},
                "families": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["delta", "q", "theta"],
                        "properties": {
                            "delta": {"type": "number"},
                            "q": {"type": "array", "items": {"type": "integer"}},
                            "theta": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                },
                "oracle_k_radius": {"type": "integer", "minimum": 0},
                "oracle_q_radius": {"type": "integer", "minimum": 1},
                "oracle_n": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "oracle_theta": {"type": "array", "items": {"type": "number"}},
            }
        ),
    },
}


# ---------------------------------------------------------------------------
# plumbing


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return data


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class Run:
    """Per-invocation context: config, seed, output directory and headers."""

    def __init__(self, command: str, config: dict, out: Path, seed: int):
        self.command = command
        self.config = config
        self.out = out
        self.seed = seed
        self.hash = config_hash(config)
        out.mkdir(parents=True, exist_ok=True)

    @property
    def header_line(self) -> str:
        return f"wellapprox {self.command} config_sha256={self.hash} seed={self.seed}"

    @property
    def header(self) -> dict:
        return {"command": self.command, "config_sha256": self.hash, "seed": self.seed, "version": __version__}

    def write_json(self, name: str, payload: dict) -> Path:
        doc = dict(self.header)
        doc.update(payload)
        path = self.out / name
        with open(path, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def section(self, key: str) -> dict:
        return self.config.get(key, {})


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _instance(run: Run):
    return instance_from_dict(run.config["instance"])


def _exponent(run: Run, inst) -> float:
    if "s" in run.config:
        return float(run.config["s"])
    dims = run.section("dims")
    est = estimate_exponent(inst.Q, inst.psi, "s", tol=dims.get("tol", 1e-3), R_schedule=dims.get("radii"))
    return est.upper


def _bumps(run: Run, inst, s: float):
    b = run.section("bump")
    K = b.get("K", default_order(inst.mn, s))
    c = b.get("c", 0.9)
    try:
        return make_bspline_bump(inst.m, K, c), make_bspline_bump(inst.mn, K, c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fm(run: Run, inst, s: float):
    sp = run.section("spectrum")
    M = float(sp.get("M", 128))
    phi, _ = _bumps(run, inst, s)
    Qp = scale_set_Q_prime(inst.Q, inst.psi, s, M, inst.m, inst.n)
    Lambda = int(sp.get("Lambda", 256))
    S = fm_spectrum(Qp, phi, inst.psi, inst.theta, Lambda, inst.m, method=sp.get("method", "scatter"))
    return M, Qp, phi, S


# ---------------------------------------------------------------------------
# subcommands


def cmd_dims(run: Run) -> int:
    inst = _instance(run)
    dims = run.section("dims")
    tol, radii = dims.get("tol", 1e-3), dims.get("radii")
    s_est = estimate_exponent(inst.Q, inst.psi, "s", tol=tol, R_schedule=radii)
    eta_est = estimate_exponent(inst.Q, inst.psi, "eta", m=inst.m, tol=tol, R_schedule=radii)
    R = radii[-1] if radii else None
    verdict = convergence_hypothesis(inst, R)
    dim_f = fourier_dimension(inst, s_est, R)
    dim_h = hausdorff_dimension(inst, eta_est)
    payload = {
        "s": {"lower": s_est.lower, "upper": s_est.upper, "radius": s_est.radius_used},
        "eta": {"lower": eta_est.lower, "upper": eta_est.upper, "radius": eta_est.radius_used},
        "convergence_hypothesis": verdict,
        "dim_F": dim_f,
        "dim_H": dim_h,
    }
    run.write_json("dims.json", payload)
    print(f"s bracket    [{s_est.lower:.6f}, {s_est.upper:.6f}]")
    print(f"eta bracket  [{eta_est.lower:.6f}, {eta_est.upper:.6f}]")
    print(f"sum psi^m    {verdict}")
    print(f"dim_F        {dim_f if isinstance(dim_f, str) else f'{dim_f:.6f}'}")
    print(f"dim_H        {dim_h:.6f}")
    return 0


def cmd_spectrum(run: Run) -> int:
    inst = _instance(run)
    s = _exponent(run, inst)
    M, Qp, phi, S = _fm(run, inst, s)
    write_spectrum_csv(S, run.out / "spectrum.csv", run.header_line)
    payload = {
        "M": M,
        "s": s,
        "qprime_size": len(Qp),
        "cutoff": S.cutoff,
        "nonzero": len(S),
        "tail_bound": fm_spectral_tail(Qp, phi, inst.psi, S.cutoff, inst.m),
        "K": phi.K,
        "c": phi.c,
    }
    run.write_json("spectrum.json", payload)
    print(f"F_M at M = {M:g}: |Q'| = {len(Qp)}, {len(S)} nonzero coefficients with |l| <= {S.cutoff}")
    return 0


def cmd_export(run: Run) -> int:
    inst = _instance(run)
    s = _exponent(run, inst)
    sp = run.section("spectrum")
    M, Qp, phi, S = _fm(run, inst, s)
    keep = np.abs(S.coef) >= sp.get("min_abs", 0.0)
    if not sp.get("include_zero", False):
        keep &= np.any(S.freqs != 0, axis=1)
    sub = type(S)(S.m, S.n, S.freqs[keep], S.coef[keep], S.cutoff)
    write_spectrum_csv(sub, run.out / "export.csv", run.header_line)
    print(f"exported {len(sub)} rows")
    return 0


def cmd_build(run: Run) -> int:
    inst = _instance(run)
    s = _exponent(run, inst)
    b = run.section("build")
    phi, f0 = _bumps(run, inst, s)
    from .measure_builder import witness_grid

    grid = witness_grid(inst.mn, b.get("witness_radius", 1024), seed=run.seed)
    stage = build_measure(b.get("k_max", 3), inst, s, phi, f0, grid=grid, k_cap=b.get("k_cap", 14))
    rows = decay_report(stage, s, shells=range(0, b.get("decay_shells", 9)), seed=run.seed)
    census = membership_census(stage, b.get("census_samples", 1000), seed=run.seed)
    write_decay_csv(rows, run.out / "decay.csv", run.header_line)
    write_stage_json(
        stage,
        run.out / "stage.json",
        header=run.header,
        extra=_jsonable(
            {
                "decay_max_ratio": max(r.ratio for r in rows),
                "decay_constant": rows[0].envelope,
                "census": {
                    "fraction": census.fraction,
                    "samples": census.samples,
                    "per_scale_counts": census.per_scale_counts,
                },
            }
        ),
    )
    print("scales " + ", ".join(f"{M:g}" for M in stage.scales))
    print(f"margins {', '.join(f'{x:.4g}' for x in stage.margins)}; census fraction {census.fraction:.3f}")
    return 0


def cmd_verify_fm(run: Run) -> int:
    inst = _instance(run)
    s = _exponent(run, inst)
    v = run.section("verify_fm")
    phi, _ = _bumps(run, inst, s)
    k = v.get("above_exp", 6) + 1
    scales = []
    while len(scales) < v.get("count", 3) and k <= v.get("k_cap", 16):
        if scriptM_member(k, inst.Q, inst.psi, s):
            scales.append(2.0 ** k)
        k += 1
    reports, failures = [], []
    for M in scales:
        Qp = scale_set_Q_prime(inst.Q, inst.psi, s, M, inst.m, inst.n)
        Lambda = v.get("lambda_factor", 4) * int(np.abs(Qp.members).max())
        S = fm_spectrum(Qp, phi, inst.psi, inst.theta, Lambda, inst.m)
        r = verify_FM_bounds(S, M, s, v.get("zeta", 0.75))
        reports.append(
            {
                "M": M,
                "zero_is_one": r.zero_is_one,
                "bounded_by_one": r.bounded_by_one,
                "zero_annulus": r.zero_annulus,
                "zero_radius": r.zero_radius,
                "fitted_constant": r.fitted_constant,
                "cutoff": S.cutoff,
            }
        )
        if not (r.zero_is_one and r.bounded_by_one and r.zero_annulus):
            failures.append(M)
    consts = [r["fitted_constant"] for r in reports]
    spread = max(consts) / min(consts) if consts and min(consts) > 0 else math.inf
    run.write_json("verify_fm.json", {"s": s, "reports": reports, "constant_spread": spread})
    for r in reports:
        print(
            f"M={r['M']:g}: (a) {r['zero_is_one']} (b) {r['bounded_by_one']} "
            f"(c) {r['zero_annulus']} (d) C={r['fitted_constant']:.4g}"
        )
    if failures or len(scales) == 0:
        raise OracleMismatch(f"F_M checks failed at M = {failures}")
    return 0


def cmd_verify_lattice(run: Run) -> int:
    v = run.section("verify_lattice")
    inst = _instance(run)
    fams = v.get("families") or [
        {"delta": d, "q": [1] * inst.n, "theta": list(inst.theta)} for d in (0.05, 0.1, 0.2)
    ]
    reports = []
    for f in fams:
        try:
            fam = SlabFamily(f["delta"], tuple(f["q"]), tuple(f["theta"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len(fam.q) != inst.n or fam.m != inst.m:
            raise ConfigError("slab family shape must match the instance")
        reports.append(
            lattice_lemma_check(
                LebesgueMeasure(inst.mn),
                fam,
                kappa=v.get("kappa", 2.0),
                N=v.get("N", 2),
                sample_budget=v.get("samples", 1_000_000),
                seed=run.seed,
            )
        )
    write_lattice_csv(reports, run.out / "lattice.csv", run.header_line)
    # plane measure oracle
    worst = 0.0
    kr, qr = v.get("oracle_k_radius", 10), v.get("oracle_q_radius", 4)
    for n in v.get("oracle_n", [2, 3]):
        ks = lattice_cube(n, kr)
        for q in lattice_cube(n, qr):
            if not q.any():
                continue
            for th in v.get("oracle_theta", [0.0, 0.3]):
                val, _ = plane_fourier_oracle_grid(q, th, ks)
                worst = max(worst, float(np.abs(val - plane_fourier_many(q, th, ks)).max()))
    run.write_json("verify_lattice.json", {"plane_oracle_max_error": worst, "families": len(reports)})
    for r in reports:
        print(f"delta={r.delta} q={r.q}: estimate {r.estimate:.6f} ci [{r.ci_lo:.6f}, {r.ci_hi:.6f}] ratio {r.ratio:.4f}")
    print(f"plane oracle max error {worst:.3e}")
    bad = [r for r in reports if not r.ci_lo <= (2 * r.delta) ** len(r.theta) <= r.ci_hi]
    if worst > 1e-6 or bad:
        raise OracleMismatch(f"lattice checks failed (oracle error {worst:.3e}, {len(bad)} families off)")
    return 0


COMMANDS = {
    "dims": cmd_dims,
    "spectrum": cmd_spectrum,
    "build": cmd_build,
    "verify-lattice": cmd_verify_lattice,
    "verify-fm": cmd_verify_fm,
    "export": cmd_export,
}


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wellapprox", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--seed", type=_u64, default=None)
        sp.add_argument("--threads", type=int, default=None)
    return p


def resolve_threads(flag) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer")
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else config.get("seed", 0)
        run = Run(args.command, config, args.out, seed)
        with threadpool_limits(resolve_threads(args.threads)):
            return COMMANDS[args.command](run)
    except WellApproxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
