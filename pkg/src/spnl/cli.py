"""Command-line entry point: ``spnl curve | simulate | verify``.

Exit status is 0 on success, 1 when a verification check fails and 2 on
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analytic, experiment, schemes
from .experiment import ExperimentConfig
from .schemes import ReferenceSpec

CURVE_SCHEMA = "spnl-curve/1"
ESTIMATES_SCHEMA = "spnl-estimates/1"
RECORDS_SCHEMA = "spnl-records/1"
OUTPUT_DIR_ENV = "SPNL_OUTPUT_DIR"

ESTIMATE_COLUMNS = [
    "bin_center_c", "S", "S_err",
    "E_ab", "E_ab_err", "E_apb", "E_apb_err", "E_abp", "E_abp_err", "E_apbp", "E_apbp_err",
    "n_accepted", "valid",
]
RECORD_COLUMNS = [
    "index", "alice_offset", "bob_offset", "accepted", "alice_sign", "bob_sign", "n15", "n16", "c",
]


class ConfigError(ValueError):
    pass


_ANGLE = re.compile(r"^\s*([+-]?[\d.]*(?:e[+-]?\d+)?)\s*\*?\s*pi\s*(?:/\s*([\d.]+))?\s*$", re.I)


def parse_angle(text: str) -> float:
    """Radians from ``1.2``, ``0.75pi``, ``3pi/4``, ``-pi/2`` or ``pi``."""
    text = str(text).strip()
    m = _ANGLE.match(text)
    if m:
        coef = m.group(1)
        coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
        denom = float(m.group(2)) if m.group(2) else 1.0
        if denom == 0:
            raise ConfigError(f"angle {text!r} divides by zero")
        return coef * math.pi / denom
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse angle {text!r}; use radians or forms like 0.75pi, 3pi/4")


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:num`` (stop inclusive) or a comma-separated list of angles."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {text!r} must be start:stop:num")
        start, stop = parse_angle(parts[0]), parse_angle(parts[1])
        try:
            num = int(parts[2])
        except ValueError:
            raise ConfigError(f"grid point count {parts[2]!r} is not an integer")
        if num < 1:
            raise ConfigError("grid needs at least one point")
        return np.linspace(start, stop, num)
    values = [parse_angle(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ConfigError("empty grid")
    return np.array(values)


def _out_path(path: str | None, default_name: str) -> Path:
    if path is not None:
        return Path(path)
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / default_name


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, schema: str, header: list[str], rows, manifest_hash: str | None = None):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {schema}\n")
            if manifest_hash:
                fh.write(f"# manifest: {manifest_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- curve


def curve_rows(scheme: int, xi_minus_eta: float, dphi: np.ndarray):
    c = np.cos(dphi + np.pi / 2)
    if scheme == 2:
        s = np.full_like(dphi, analytic.s_scheme2(xi_minus_eta), dtype=float)
    else:
        s = analytic.s_scheme1(xi_minus_eta, dphi)
    return list(zip(dphi, c, s))


def cmd_curve(args) -> int:
    if args.scheme not in (1, 2, 3):
        raise ConfigError("--scheme must be 1, 2 or 3")
    dphi = parse_grid(args.grid)
    rows = curve_rows(args.scheme, parse_angle(args.xi_minus_eta), dphi)
    path = _out_path(args.output, f"curve_scheme{args.scheme}.{args.format}")
    if args.format == "json":
        _write_json(path, {"schema": CURVE_SCHEMA, "rows": [
            {"delta_phi": float(d), "c": float(c), "S_analytic": float(s)} for d, c, s in rows
        ]})
    else:
        _write_csv(path, CURVE_SCHEMA, ["delta_phi", "c", "S_analytic"], rows)
    print(path)
    return 0


def _write_json(path: Path, obj):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- simulate


@dataclass
class RunManifest:
    config: dict
    tool_version: str = __version__
    seed: int = 0
    timestamp: str = ""
    erratum_mode: str = "derived"
    outputs: dict = field(default_factory=dict)

    def reproducibility_hash(self) -> str:
        body = {k: v for k, v in asdict(self).items() if k not in ("timestamp", "outputs")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


SIM_KEYS = {
    "scheme": int, "xi_minus_eta": str, "eta": str, "alpha": float, "reference": str,
    "n_ref": int, "cutoff": int, "shots": int, "bins": int, "seed": int,
    "bin_variable": str, "readout": str, "erratum_mode": str, "jobs": int,
}
SIM_DEFAULTS = {
    "scheme": 3, "xi_minus_eta": "0.75pi", "eta": "0", "alpha": math.sqrt(2),
    "reference": "phase-averaged", "n_ref": 4, "cutoff": None, "shots": 1_000_000, "bins": 16,
    "seed": 20080101, "bin_variable": "c", "readout": "deterministic", "erratum_mode": "derived",
    "jobs": 1,
}


def load_config_file(path: str) -> dict:
    """Read ``[simulate]`` keys (flag names, dashes or underscores) from an INI file."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not parser.has_section("simulate"):
        raise ConfigError(f"config {path} has no [simulate] section")
    out = {}
    for key, raw in parser.items("simulate"):
        name = key.replace("-", "_")
        if name not in SIM_KEYS:
            raise ConfigError(f"unknown config key {key!r}; known: {sorted(SIM_KEYS)}")
        try:
            out[name] = SIM_KEYS[name](raw)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r}")
    return out


def _reference(kind: str, alpha: float, n_ref: int, cutoff) -> ReferenceSpec:
    if kind == "phase-averaged":
        return ReferenceSpec.phase_averaged(alpha, cutoff=cutoff)
    if kind == "coherent":
        return ReferenceSpec.coherent(alpha, cutoff=cutoff)
    if kind == "number":
        return ReferenceSpec.number(n_ref)
    if kind == "poisson-mixture":
        return ReferenceSpec.poisson_mixture(alpha, cutoff=cutoff)
    raise ConfigError(f"unknown reference kind {kind!r}")


def resolve_settings(args) -> dict:
    settings = dict(SIM_DEFAULTS)
    if getattr(args, "from_manifest", None):
        try:
            settings.update(json.loads(Path(args.from_manifest).read_text())["config"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load manifest {args.from_manifest}: {exc}") from exc
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for key in SIM_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def build_config(settings: dict) -> ExperimentConfig:
    eta = parse_angle(settings["eta"])
    xi = eta + parse_angle(settings["xi_minus_eta"])
    ref = _reference(settings["reference"], settings["alpha"], settings["n_ref"], settings["cutoff"])
    cfg = ExperimentConfig(
        scheme=settings["scheme"], xi=xi, eta=eta, ref_a=ref, ref_b=ref,
        shots=settings["shots"], bins=settings["bins"], seed=settings["seed"],
        readout=settings["readout"], bin_variable=settings["bin_variable"],
        erratum_mode=settings["erratum_mode"], cutoff=settings["cutoff"] if settings["scheme"] != 3 else None,
        n_jobs=settings["jobs"],
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def estimate_rows(estimates):
    for b in estimates:
        row = [b.c_center, b.S, b.S_err]
        for name in experiment.PAIR_NAMES:
            row += [b.E[name], b.E_err[name]]
        yield row + [b.n_accepted, b.valid]


def cmd_simulate(args) -> int:
    settings = resolve_settings(args)
    cfg = build_config(settings)
    manifest = RunManifest(
        config=settings, seed=cfg.seed, erratum_mode=cfg.erratum_mode,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    )
    manifest.config["bin_variable_branch"] = "principal dphi in [-pi/2, pi/2], dphi = -arcsin(c)"
    mhash = manifest.reproducibility_hash()

    records = experiment.run_chsh_experiment(cfg)
    estimates = experiment.bin_and_estimate(records, cfg.bins, cfg.bin_variable)

    est_path = _out_path(args.estimates_out, f"estimates.{args.format}")
    if args.format == "json":
        _write_json(est_path, {
            "schema": ESTIMATES_SCHEMA, "manifest": mhash,
            "rows": [dict(zip(ESTIMATE_COLUMNS, r)) for r in estimate_rows(estimates)],
        })
    else:
        _write_csv(est_path, ESTIMATES_SCHEMA, ESTIMATE_COLUMNS, estimate_rows(estimates), mhash)
    manifest.outputs["estimates"] = str(est_path)
    manifest.outputs["estimates_sha256"] = hashlib.sha256(est_path.read_bytes()).hexdigest()

    if args.records_out:
        rec_path = Path(args.records_out)
        rows = (
            [i, r.alice_offset, r.bob_offset, r.accepted, r.alice_sign or 0, r.bob_sign or 0,
             math.nan if r.n15 is None else r.n15, math.nan if r.n16 is None else r.n16,
             math.nan if r.c is None else r.c]
            for i, r in enumerate(records)
        )
        _write_csv(rec_path, RECORDS_SCHEMA, RECORD_COLUMNS, rows, mhash)
        manifest.outputs["records"] = str(rec_path)
    manifest.outputs["records_digest"] = records.digest()
    manifest.outputs["reproducibility_hash"] = mhash

    man_path = Path(args.manifest_out) if args.manifest_out else est_path.with_suffix(".manifest.json")
    _write_json(man_path, asdict(manifest))
    n_acc = int(records.accepted.sum())
    print(f"{cfg.shots} shots, {n_acc} accepted; estimates -> {est_path}; manifest -> {man_path}")
    for b in estimates:
        flag = "" if b.valid else "  (invalid: empty setting pair)"
        print(f"  c={b.c_center:+.4f}  S={b.S:.4f} +/- {b.S_err:.4f}  n={b.n_accepted}{flag}")
    return 0


# ---------------------------------------------------------------- verify


def _check(name, deviation, tolerance, **extra):
    return {"check": name, "deviation": float(deviation), "tolerance": float(tolerance),
            "pass": bool(deviation <= tolerance), **extra}


def run_checks(shots: int = 100_000, seed: int = 7, tolerance: float = 1e-10) -> list[dict]:
    report = []
    angles = np.linspace(0, 2 * np.pi, 5, endpoint=False) + 0.1
    dphis = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    dev = 0.0
    for xi in angles:
        for eta in angles:
            for d in dphis:
                sim = schemes.run_scheme1_exact(xi, eta, 0.0, d).pattern_probs
                ref = analytic.scheme1_pattern_probs(xi, eta, d)
                dev = max(dev, max(abs(sim[p] - ref[p]) for p in ref))
    report.append(_check("analytic_vs_simulator_scheme1", dev, tolerance, grid="5x5x8"))

    dev = 0.0
    for xi in angles:
        for eta in angles:
            sim = schemes.run_scheme2_exact(xi, eta, 0.7).pattern_probs
            ref = analytic.scheme1_pattern_probs(xi, eta, np.pi / 2)
            dev = max(dev, max(abs(sim[p] - ref[p]) for p in ref))
    report.append(_check("scheme2_equals_scheme1_at_pi_over_2", dev, tolerance))

    r = schemes.run_scheme3_exact(
        0.0, 0.0, ReferenceSpec.coherent(math.sqrt(2)), ReferenceSpec.coherent(math.sqrt(2) * 1j)
    )
    ratio = schemes.remainder_ratio(*r.remainder_means)
    derived = math.cos(math.pi / 2 + math.pi / 2)
    report.append(_check("ratio_formula_derived", abs(ratio - derived), tolerance,
                         simulated_ratio=ratio, derived=derived, doubled_reading=2 * derived,
                         doubled_reading_deviation=abs(ratio - 2 * derived)))

    pa = schemes.run_scheme3_exact(0.3, -0.4, ReferenceSpec.phase_averaged(), ReferenceSpec.phase_averaged())
    mix = ReferenceSpec.poisson_mixture(math.sqrt(2))
    pm = schemes.run_scheme3_exact(0.3, -0.4, mix, mix)
    keys = set(pa.joint) | set(pm.joint)
    dev = max(abs(pa.joint.get(k, 0.0) - pm.joint.get(k, 0.0)) for k in keys)
    report.append(_check("phase_averaged_equals_poisson_mixture", dev, 1e-8, quadrature=64))

    for scheme, target in ((1, math.sqrt(2)), (2, 2 * math.sqrt(2))):
        recs = experiment.run_chsh_experiment(ExperimentConfig(scheme=scheme, shots=shots, bins=1, seed=seed))
        s, err = experiment.phase_average_estimate(recs)
        report.append(_check(f"monte_carlo_scheme{scheme}_S", abs(s - target), 3 * err,
                             S=s, S_err=err, expected=target, shots=shots))
    return report


def cmd_verify(args) -> int:
    report = run_checks(shots=args.shots, seed=args.seed, tolerance=args.tolerance)
    ok = all(c["pass"] for c in report)
    text = json.dumps({"tool_version": __version__, "pass": ok, "checks": report}, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0 if ok else 1


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spnl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"spnl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curve", help="analytic S versus reference phase difference")
    c.add_argument("--scheme", type=int, default=1)
    c.add_argument("--xi-minus-eta", default="0.75pi")
    c.add_argument("--grid", default="0:2pi:1000", help="start:stop:num or comma list (radians or Npi)")
    c.add_argument("--output", "-o")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.set_defaults(func=cmd_curve)

    s = sub.add_parser("simulate", help="Monte Carlo CHSH experiment")
    s.add_argument("--config", help="INI file with a [simulate] section")
    s.add_argument("--from-manifest", help="rerun the configuration stored in a manifest")
    s.add_argument("--scheme", type=int)
    s.add_argument("--xi-minus-eta")
    s.add_argument("--eta")
    s.add_argument("--alpha", type=float)
    s.add_argument("--reference", choices=("phase-averaged", "coherent", "number", "poisson-mixture"))
    s.add_argument("--n-ref", type=int, help="photon number for --reference number")
    s.add_argument("--cutoff", type=int)
    s.add_argument("--shots", type=int)
    s.add_argument("--bins", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--bin-variable", choices=("c", "delta-phi"))
    s.add_argument("--readout", choices=("deterministic", "sampled"))
    s.add_argument("--erratum-mode", choices=("derived", "paper"))
    s.add_argument("--jobs", type=int)
    s.add_argument("--records-out")
    s.add_argument("--estimates-out")
    s.add_argument("--manifest-out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="oracle cross-checks with a pass/fail report")
    v.add_argument("--tolerance", type=float, default=1e-10)
    v.add_argument("--shots", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--report")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"spnl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
