"""Command-line front end.

Three subcommands: ``analyze`` estimates a causal effect from summary-
statistic files, ``simulate`` runs a seeded Monte-Carlo study, and ``clump``
runs instrument selection alone.  Exit codes: 0 success, 2 input/validation
problem, 3 numerical failure; all output files are written atomically.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys

import click

from . import __version__
from .errors import ConfigError, DeemError, NumericalError, ValidationError
from .estimators import Mode, run_deem
from .ldcore import (
    LdBlockSet,
    estimate_block_correlations,
    load_block_map,
    load_corr_dir,
    load_reference_genotypes,
)
from .selection import KEPT, PRESETS, SelectionConfig, select
from .simkit import KNOWN_METHODS, Scenario, run_study
from .sumstats import harmonize, load_sumstats

__all__ = ["main"]


def _write_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_ld(blocks: str, reference: str | None, corr_dir: str | None) -> LdBlockSet:
    if (reference is None) == (corr_dir is None):
        raise ConfigError("exactly one of --reference or --corr-dir is required")
    block_map = load_block_map(blocks)
    if reference is not None:
        return estimate_block_correlations(load_reference_genotypes(reference), block_map)
    return load_corr_dir(corr_dir, block_map)


def _selection_config(
    preset: str | None, pval_threshold: float | None, clump_r: float | None
) -> SelectionConfig:
    base = PRESETS[preset or "deem"]
    return SelectionConfig(
        pvalue_threshold=base.pvalue_threshold if pval_threshold is None else pval_threshold,
        clump_r_threshold=base.clump_r_threshold if clump_r is None else clump_r,
    )


def _fail(exc: DeemError) -> None:
    stage = getattr(exc, "stage", None) or "input"
    click.echo(f"error [{stage}]: {exc}", err=True)
    sys.exit(2 if isinstance(exc, ValidationError) else 3)


def _manifest(out: str, config: dict) -> None:
    payload = {"version": __version__, "config": config}
    _write_atomic(os.path.join(out, "manifest.json"), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _preset_options(fn):
    for name in ("independent", "strict", "deem"):
        fn = click.option(
            f"--{name}", "preset", flag_value=name,
            help=f"Use the '{name}' selection preset.", default=None,
        )(fn)
    return fn


def _ld_options(fn):
    fn = click.option("--blocks", required=True, type=click.Path(exists=True, dir_okay=False),
                      help="Block map TSV (block_id, snp_id).")(fn)
    fn = click.option("--reference", type=click.Path(exists=True, dir_okay=False),
                      help="Reference dosage TSV for LD estimation.")(fn)
    fn = click.option("--corr-dir", type=click.Path(exists=True, file_okay=False),
                      help="Directory of precomputed <block_id>.corr.tsv files.")(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="deem")
def main():
    """Summary-statistics causal-effect estimation with correlated weak instruments."""


@main.command()
@click.option("--exposure", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--outcome", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--supplemental", required=True, type=click.Path(exists=True, dir_okay=False))
@_ld_options
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default="two-sample",
              show_default=True)
@click.option("--pval-threshold", type=float, default=None,
              help="Selection p-value threshold (overrides preset).")
@click.option("--clump-r", type=float, default=None,
              help="Max |correlation| retained when clumping (overrides preset).")
@_preset_options
@click.option("--lambda", "lam", type=float, default=0.5, show_default=True,
              help="Shrinkage weight on the reference correlations inside V.")
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None, help="Worker processes (unused here).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def analyze(exposure, outcome, supplemental, blocks, reference, corr_dir, mode,
            pval_threshold, clump_r, preset, lam, level, seed, threads, out):
    """Estimate the exposure-outcome causal effect from summary statistics."""
    try:
        cfg = _selection_config(preset, pval_threshold, clump_r)
        ld = _load_ld(blocks, reference, corr_dir)
        exp = load_sumstats(exposure, "exposure")
        outc = load_sumstats(outcome, "outcome")
        sup = load_sumstats(supplemental, "supplemental")
        ds = harmonize(exp, outc, sup, ld)
        est = run_deem(ds, cfg, mode=Mode(mode), lam=lam, level=level)
    except DeemError as exc:
        _fail(exc)

    os.makedirs(out, exist_ok=True)
    _write_atomic(os.path.join(out, "result.json"),
                  json.dumps(est.to_json_dict(), indent=2) + "\n")
    row = est.to_csv_row()
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(row))
    writer.writeheader()
    writer.writerow(row)
    _write_atomic(os.path.join(out, "result.csv"), buf.getvalue())
    _manifest(out, {
        "subcommand": "analyze",
        "exposure": exposure, "outcome": outcome, "supplemental": supplemental,
        "blocks": blocks, "reference": reference, "corr_dir": corr_dir,
        "mode": mode, "pval_threshold": cfg.pvalue_threshold,
        "clump_r": cfg.clump_r_threshold, "lambda": lam, "level": level,
        "seed": seed, "harmonization": ds.report,
    })
    click.echo(f"beta={est.beta:.6g} se={est.se:.6g} "
               f"ci=[{est.ci_low:.6g}, {est.ci_high:.6g}] n_snps={est.n_snps}")


@main.command()
@click.option("--scenario", type=click.Path(exists=True, dir_okay=False),
              help="Scenario JSON; defaults apply for missing keys.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--replicates", type=int, default=None, help="Override the replicate count.")
@click.option("--methods", default=",".join(KNOWN_METHODS), show_default=True,
              help="Comma-separated method list.")
@click.option("--threads", type=int, default=None,
              help="Worker processes for replicates [default: all cores].")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def simulate(scenario, seed, replicates, methods, threads, out):
    """Run a seeded Monte-Carlo study and write metrics/replicates CSVs."""
    try:
        sc = Scenario.from_json(scenario) if scenario else Scenario()
        overrides = {}
        if seed is not None:
            overrides["seed"] = seed
        if replicates is not None:
            overrides["replicates"] = replicates
        if overrides:
            sc = Scenario.from_json({**sc.to_dict(), **overrides})
        method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
        threads = threads if threads is not None else (os.cpu_count() or 1)
        os.makedirs(out, exist_ok=True)
        table = run_study(sc, methods=method_list, threads=threads, out_dir=out)
    except DeemError as exc:
        _fail(exc)

    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    manifest["version"] = __version__
    manifest["config"] = {"subcommand": "simulate", "scenario_file": scenario,
                          "threads": threads, "methods": list(method_list)}
    _write_atomic(os.path.join(out, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for row in table.rows:
        click.echo(
            f"{row['method']}: bias={row['bias']:.4g} se={row['se']:.4g} "
            f"rmse={row['rmse']:.4g} coverage={row['coverage_rate']:.3f} "
            f"n_snps={row['mean_n_snps']:.1f}"
        )


@main.command()
@click.option("--supplemental", required=True, type=click.Path(exists=True, dir_okay=False))
@_ld_options
@click.option("--pval-threshold", type=float, default=None)
@click.option("--clump-r", type=float, default=None)
@_preset_options
@click.option("--out", required=True, type=click.Path(dir_okay=False, writable=True))
def clump(supplemental, blocks, reference, corr_dir, pval_threshold, clump_r, preset, out):
    """Run instrument selection only; write a per-SNP kept/pruned TSV."""
    try:
        cfg = _selection_config(preset, pval_threshold, clump_r)
        ld = _load_ld(blocks, reference, corr_dir)
        sup = load_sumstats(supplemental, "supplemental")
        ds = harmonize(sup, sup, sup, ld)
        sel = select(ds, cfg)
    except DeemError as exc:
        _fail(exc)

    lines = ["snp_id\tkept\treason\tpvalue"]
    for i, snp_id in enumerate(ds.snp_index):
        reason = sel.provenance[snp_id]
        lines.append(f"{snp_id}\t{int(reason == KEPT)}\t{reason}\t{sel.pvals[i]:.6g}")
    _write_atomic(out, "\n".join(lines) + "\n")
    counts = sel.counts()
    click.echo(f"kept={counts[KEPT]} of {ds.dim}")
