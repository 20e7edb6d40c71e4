"""Command-line entry point: ``famgwas <subcommand> [flags]``.

Every run writes its outputs atomically under ``--out`` together with a
``manifest.json`` recording the flags, input digests, seed, version and
timestamps.  Exit status: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .core import DataError, FamGwasError, GeneticModel, MODEL_KINDS, ParameterError

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _plain(v):
    kind = getattr(v, "kind", None)
    if kind == "auto":
        return "auto"
    if kind == "fixed":
        return v.value
    return str(v) if isinstance(v, Path) else v


def write_manifest(out, args, inputs, seed=None, started=None, outputs=()):
    from .io import atomic_write

    flags = {k: _plain(v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "flags": flags,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(o) for o in outputs),
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with atomic_write(Path(out) / "manifest.json") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _positive_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{s!r} must be at least 1")
    return v


def _fraction(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number") from None
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"{s!r} must lie in [0, 1]")
    return v


def _grid(s):
    """``a,b,c`` or ``lo:hi:step``."""
    try:
        if ":" in s:
            lo, hi, step = map(float, s.split(":"))
            n = int(round((hi - lo) / step)) + 1
            return [round(lo + i * step, 12) for i in range(n)]
        return [float(x) for x in s.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {s!r}; use a,b,c or lo:hi:step") from None


def _offset(s):
    from .fbat import OffsetSpec

    if s == "auto":
        return OffsetSpec()
    try:
        return OffsetSpec.fixed(float(s))
    except ValueError:
        raise argparse.ArgumentTypeError(f"offset must be 'auto' or a number, got {s!r}") from None


def _add_input(p):
    p.add_argument("--ped", required=True, type=Path, help="pedigree file (PED layout)")
    p.add_argument("--map", required=True, type=Path, help="marker map file (MAP layout)")
    p.add_argument("--trait-kind", choices=("auto", "binary", "quantitative"), default="auto")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)


def _add_model(p):
    p.add_argument("--model", choices=MODEL_KINDS, default="additive")
    p.add_argument("--risk-allele", default="minor",
                   help="allele label, or 'minor' / 'major' (default: minor)")
    p.add_argument("--offset", type=_offset, default="auto", help="'auto' or a fixed trait offset")


def build_parser():
    ap = argparse.ArgumentParser(prog="famgwas", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qc", help="quality-control cascade")
    _add_input(p)
    p.add_argument("--min-maf", type=_fraction, default=0.01)
    p.add_argument("--max-mendel-errors", type=int, default=5,
                   help="per marker and per family; negative disables wholesale removal")
    p.add_argument("--min-call-rate", type=_fraction, default=0.95, help="marker call rate")
    p.add_argument("--min-person-call-rate", type=_fraction, default=0.90)
    p.add_argument("--hwe-alpha", type=_fraction, default=1e-6)
    p.set_defaults(func=cmd_qc)

    p = sub.add_parser("fbat", help="family-based association scan")
    _add_input(p)
    _add_model(p)
    p.add_argument("--alpha", type=_fraction, default=1e-5, help="level for the 'significant' column")
    p.add_argument("--min-informative", type=int, default=10)
    p.set_defaults(func=cmd_fbat)

    p = sub.add_parser("tdt", help="transmission disequilibrium test")
    _add_input(p)
    p.add_argument("--risk-allele", default="minor")
    p.add_argument("--min-informative", type=int, default=10)
    p.set_defaults(func=cmd_tdt)

    p = sub.add_parser("screen", help="two-stage screening and testing")
    _add_input(p)
    _add_model(p)
    p.add_argument("--strategy", choices=("topk", "weighted"), default="topk")
    p.add_argument("--k", type=_positive_int, default=10)
    p.add_argument("--alpha", type=_fraction, default=0.05)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("power", help="power curves (closed form for cc/trio, Monte Carlo for dsp/dst)")
    p.add_argument("--design", choices=("cc", "trio", "dsp", "dst"), required=True)
    p.add_argument("--p", type=float, help="risk allele frequency")
    p.add_argument("--grid", type=_grid, help="allele frequency grid: a,b,c or lo:hi:step")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rho", type=float, help="recessive relative risk")
    g.add_argument("--odds-ratio", type=float, help="recessive odds ratio")
    p.add_argument("--prevalence", type=float, required=True)
    p.add_argument("--n", type=_positive_int, required=True, help="affected probands (cases)")
    p.add_argument("--alpha", type=float, default=1e-5)
    p.add_argument("--two-sided", action="store_true", help="two-sided power (default one-sided)")
    p.add_argument("--replicates", type=_positive_int, default=1000, help="Monte Carlo designs only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parents-typed", action="store_true", help="dsp/dst: genotype the parents")
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("simulate", help="simulate a cohort into PED/MAP files")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help="named scenario: trio-k014-scan, trio-k001-scan, dsp-k014, dst-k014, "
                                      "cc-k001, trio-k001")
    src.add_argument("--config", type=Path, help="flat key=value scenario file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario key (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("rejection", "exact"), default="rejection")
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_simulate)
    return ap


# --- subcommands: each returns (inputs, outputs, seed) -----------------------------------

def _load(args):
    from .io import read_cohort

    return read_cohort(args.ped, args.map, args.trait_kind)


def cmd_qc(args):
    from . import qc
    from .io import write_map, write_ped

    cohort = _load(args)
    thr = args.max_mendel_errors if args.max_mendel_errors >= 0 else None
    cfg = qc.QcConfig(thr, thr, args.min_call_rate, args.min_person_call_rate, args.min_maf,
                      args.hwe_alpha)
    clean, report = qc.apply_filters(cohort, cfg)
    outs = [args.out / "qc_report.tsv", args.out / "clean.ped", args.out / "clean.map"]
    report.write(outs[0])
    write_ped(clean, outs[1])
    write_map(clean, outs[2])
    s = report.summary()
    print(f"{s['markers_excluded']}/{s['markers_in']} markers excluded, "
          f"{s['families_excluded']} families, {s['persons_excluded']} persons, "
          f"{s['genotype_sets_deleted']} genotype sets deleted")
    return [args.ped, args.map], outs, None


def cmd_fbat(args):
    from .fbat import RESULT_COLUMNS, scan
    from .io import write_tsv

    cohort = _load(args)
    model = GeneticModel(args.model, args.risk_allele)
    res = scan(cohort, model, args.offset, min_informative=args.min_informative, n_jobs=args.threads)
    out = args.out / "fbat.tsv"
    rows = [r.row() + (int(r.p_value <= args.alpha) if r.p_value == r.p_value else 0,) for r in res]
    write_tsv(out, RESULT_COLUMNS + ("significant",), rows)
    hits = sum(r[-1] for r in rows)
    print(f"{len(res)} markers tested, {hits} with p <= {args.alpha:g}")
    return [args.ped, args.map], [out], None


def cmd_tdt(args):
    from .fbat import tdt_scan, transmission_counts
    from .io import write_tsv

    cohort = _load(args)
    res = tdt_scan(cohort, None, args.risk_allele, args.min_informative)
    b, c = transmission_counts(cohort, None, args.risk_allele)
    rows = [(m.marker_id, m.chromosome, m.position, int(b[j]), int(c[j]), r.Z, r.p_value, r.status)
            for j, (m, r) in enumerate(zip(cohort.markers, res))]
    out = args.out / "tdt.tsv"
    write_tsv(out, ("marker_id", "chrom", "pos", "b", "c", "Z", "p", "status"), rows)
    return [args.ped, args.map], [out], None


def cmd_screen(args):
    from . import twostage

    cohort = _load(args)
    model = GeneticModel(args.model, args.risk_allele)
    ranks = twostage.screen(cohort, model, args.offset, args.alpha, args.k)
    spec = twostage.StrategySpec(args.strategy, args.k, args.alpha)
    res = twostage.test_stage(cohort, ranks, spec, model, args.offset, n_jobs=args.threads)
    outs = [args.out / "screen.tsv", args.out / "decisions.tsv"]
    twostage.write_screen(outs[0], ranks)
    twostage.write_decisions(outs[1], res)
    print(f"{len(res.rejected)} markers rejected; alpha spent {res.alpha_spent:.4g}")
    return [args.ped, args.map], outs, None


def cmd_power(args):
    from . import power
    from .io import write_tsv

    if (args.p is None) == (args.grid is None):
        raise ParameterError("give exactly one of --p and --grid")
    grid = [args.p] if args.p is not None else args.grid
    out = args.out / "power.tsv"
    if args.design in ("dsp", "dst"):
        rows = _mc_power_rows(args, grid)
        header = ("design", "p", "odds_ratio", "rho", "K", "N", "alpha", "replicates",
                  "mean_z", "power", "se")
    else:
        header, rows = _analytic_power_rows(args, grid, power)
    write_tsv(out, header, rows)
    for row in [header] + rows:
        print("\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    return [], [out], args.seed if args.design in ("dsp", "dst") else None


def _analytic_power_rows(args, grid, power):
    rows = []
    if args.design == "cc":
        header = ("design", "p", "rho", "K", "N", "alpha", "p_cases", "p_controls", "p_bar",
                  "expected_z", "power")
    else:
        header = ("design", "p", "rho", "K", "N", "alpha", "n_type1", "n_type2", "residual_type1",
                  "residual_type2", "expected_z", "power", "closed_form_z",
                  "alt_residual_z", "reference_z")
    for p in grid:
        rho = args.rho if args.rho is not None else power.relative_risk_from_odds_ratio(
            args.odds_ratio, args.prevalence, p)
        prm = power.DesignParams(p, rho, args.prevalence, args.n, args.alpha)
        head = (args.design, p, rho, args.prevalence, args.n, args.alpha)
        if args.design == "cc":
            r = power.case_control_expected_z(prm, args.two_sided)
            rows.append(head + (r.p_cases, r.p_controls, r.p_bar, r.expected_z, r.power))
        else:
            r = power.trio_expected_z(prm, args.two_sided)
            b = r.breakdown
            rows.append(head + (b.n_type1, b.n_type2, b.residual_type1, b.residual_type2,
                                r.expected_z, r.power, r.closed_form_z, r.alt_residual_z,
                                r.reference_z))
    return header, rows


def _mc_power_rows(args, grid):
    from . import sim

    rows = []
    for k, p in enumerate(grid):
        dis = sim.DiseaseModel(prevalence=args.prevalence, relative_risk=args.rho,
                               odds_ratio=args.odds_ratio)
        design = sim.DesignSpec(args.design, args.n, parents_typed=args.parents_typed)
        mc = sim.monte_carlo_power(design, sim.PopulationModel(p), dis, alpha=args.alpha,
                                   replicates=args.replicates, seed=args.seed + k)
        rows.append((args.design, p, args.odds_ratio, args.rho, args.prevalence, args.n, args.alpha,
                     args.replicates, mc.mean_z, mc.power, mc.se))
    return rows


def cmd_simulate(args):
    from . import sim
    from .io import write_map, write_ped

    if args.preset:
        if args.preset not in sim.PRESETS:
            raise ParameterError(f"unknown preset {args.preset!r}; choose from {sorted(sim.PRESETS)}")
        cfg = dict(sim.PRESETS[args.preset])
        inputs = []
    else:
        cfg = {}
        with open(args.config) as fh:
            for lineno, line in enumerate(fh, 1):
                s = line.split("#", 1)[0].strip()
                if not s:
                    continue
                if "=" not in s:
                    raise DataError("expected key=value", args.config, lineno)
                k, v = s.split("=", 1)
                cfg[k.strip()] = v.strip()
        inputs = [args.config]
    for item in args.set:
        if "=" not in item:
            raise ParameterError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    sc = sim.Scenario.from_mapping(cfg)
    cohort = sim.generate(sc.design, sc.population, sc.disease, sc.error, seed=args.seed,
                          method=args.method)
    outs = [args.out / "sim.ped", args.out / "sim.map"]
    write_ped(cohort, outs[0])
    write_map(cohort, outs[1])
    print(f"{cohort.n_persons} persons, {cohort.n_markers} markers, {len(cohort.families)} families")
    return inputs, outs, args.seed


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        inputs, outputs, seed = args.func(args)
        write_manifest(args.out, args, inputs, seed, started, outputs)
    except ParameterError as e:
        print(f"famgwas {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FamGwasError, OSError) as e:
        print(f"famgwas {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
