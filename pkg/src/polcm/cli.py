"""Command-line entry point: ``polcm check|simulate|estimate|eval|bench``."""

from __future__ import annotations

import functools
import json
import logging
import sys

import click
import numpy as np

from . import bench as bench_mod
from . import fixtures
from .covariance import (
    check_support,
    edges_from_weights,
    read_covariance_csv,
    standardize_model,
    support_mask,
    weights_from_edges,
)
from .estimator import EstimationFailed, EstimatorConfig, estimate
from .graph import GraphError, PolcmGraph, graph_from_dict, load_graph
from .identifiability import Verdict, check_identifiability
from .metrics import mse_group_sign, mse_orthogonal
from .simulator import SimConfig, random_polcm, read_dataset_csv, sample_covariance, simulate, standardize, write_dataset_csv

EXIT_OK, EXIT_INPUT, EXIT_NOT_IDENTIFIABLE = 0, 1, 2


def _fail_on_bad_input(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (GraphError, ValueError, KeyError, OSError, EstimationFailed) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)

    return wrapper


def _load(path: str) -> tuple[PolcmGraph, dict | None]:
    """Graph file path, or the name of a bundled fixture."""
    try:
        return load_graph(path)
    except FileNotFoundError:
        if path in fixtures.names():
            return fixtures.load(path), None
        raise


def _write_json(obj, out: str | None, quiet: bool) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    elif not quiet:
        click.echo(text)


def _edge_triples(g: PolcmGraph, f: np.ndarray) -> list[list]:
    return [[a, b, float(f[a, b])] for a, b in sorted(g.edges)]


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Identifiability checks and estimation for partially observed linear causal models."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.argument("graph")
@click.option("--max-cover-size", default=4, show_default=True)
@click.option("--max-sep-size", default=5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@click.option("--quiet", is_flag=True)
@_fail_on_bad_input
def check(graph, max_cover_size, max_sep_size, out, quiet):
    """Check identifiability of GRAPH (exit 0 if fully identifiable, 2 otherwise)."""
    g, _ = _load(graph)
    report = check_identifiability(g, max_cover_size, max_sep_size)
    data = report.to_dict(g)
    if out:
        _write_json(data, out, quiet)
    if not quiet:
        click.echo(f"verdict: {report.verdict.value}")
        for grp in report.orth_indeterminacy:
            click.echo(f"orthogonal indeterminacy among: {', '.join(g.label(grp))}")
        if not out:
            _write_json(data, None, quiet)
    sys.exit(EXIT_OK if report.verdict is Verdict.FULLY_IDENTIFIABLE else EXIT_NOT_IDENTIFIABLE)


@main.command("simulate")
@click.argument("graph")
@click.option("--k", "k", default=10000, show_default=True, help="Sample size.")
@click.option("--seed", default=0, show_default=True)
@click.option("--noise", type=click.Choice(["gaussian", "uniform"]), default="gaussian", show_default=True)
@click.option("--lrelu-alpha", type=float, default=None, help="Apply max(a*x, x) at every node.")
@click.option("--standardize/--raw", "do_standardize", default=False, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Data CSV.")
@click.option("--truth", type=click.Path(dir_okay=False), help="Ground-truth JSON.")
@click.option("--quiet", is_flag=True)
@_fail_on_bad_input
def simulate_cmd(graph, k, seed, noise, lrelu_alpha, do_standardize, out, truth, quiet):
    """Draw a random model on GRAPH and sample observed data from it.

    Coefficients in the graph file are used when present.
    """
    g, coefs = _load(graph)
    cfg = SimConfig(sample_size=k, seed=seed, noise_kind=noise, lrelu_alpha=lrelu_alpha)
    f, omega = random_polcm(g, cfg)
    if coefs is not None:
        f = weights_from_edges(g, coefs)
    data = simulate(g, f, omega, cfg)
    f_std = bench_mod.truth_model(f, omega)
    if do_standardize:
        data = standardize(data)
    write_dataset_csv(out, data)
    if truth:
        doc = g.to_dict()
        doc.update(
            coefficients=_edge_triples(g, f_std),
            raw_coefficients=_edge_triples(g, f),
            omega=[float(x) for x in omega],
            standardized_omega=[float(x) for x in standardize_model(f, omega)[1]],
            simulation={"k": k, "seed": seed, "noise": noise, "lrelu_alpha": lrelu_alpha},
        )
        _write_json(doc, truth, True)
    if not quiet:
        click.echo(f"wrote {k} samples of {g.num_observed} variables to {out}")


def _observed_order(g: PolcmGraph, names) -> np.ndarray:
    want = list(g.names[g.num_latent :])
    names = list(names)
    if sorted(names) != sorted(want):
        raise ValueError(f"columns {names} do not match the observed variables {want}")
    return np.array([names.index(nm) for nm in want])


@main.command("estimate")
@click.argument("graph")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Observed data CSV.")
@click.option("--cov", type=click.Path(exists=True, dir_okay=False), help="Covariance CSV.")
@click.option("--k", "k", type=int, help="Sample size (required with --cov).")
@click.option("--method", type=click.Choice(["tr", "lm"]), default="tr", show_default=True)
@click.option("--restarts", default=30, show_default=True)
@click.option("--lr", default=0.02, show_default=True)
@click.option("--max-iters", default=5000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--quiet", is_flag=True)
@_fail_on_bad_input
def estimate_cmd(graph, data, cov, k, method, restarts, lr, max_iters, seed, out, quiet):
    """Fit edge coefficients of GRAPH by maximum likelihood."""
    g, _ = _load(graph)
    if (data is None) == (cov is None):
        raise ValueError("give exactly one of --data or --cov")
    if data:
        ds = read_dataset_csv(data)
        idx = _observed_order(g, ds.names)
        ds.samples = ds.samples[:, idx]
        sigma = sample_covariance(standardize(ds))
        k = k or ds.k
    else:
        if k is None:
            raise ValueError("--k is required with --cov")
        names, sigma = read_covariance_csv(cov)
        idx = _observed_order(g, names)
        sigma = sigma[np.ix_(idx, idx)]
    cfg = EstimatorConfig(method=method, restarts=restarts, learning_rate=lr, max_iters=max_iters, seed=seed)
    res = estimate(g, sigma, k, cfg)
    doc = {
        "graph": g.to_dict(),
        "method": method,
        "k": k,
        "f_hat": _edge_triples(g, res.f_hat),
        "f_hat_named": res.edge_list(g),
        "omega_hat": [float(x) for x in res.omega_hat],
        "nll": res.nll,
        "objective": res.objective,
        "restart_index": res.restart_index,
        "converged": res.converged,
        "iterations": res.iterations,
        "restarts": res.restarts,
    }
    _write_json(doc, out, quiet)
    if out and not quiet:
        click.echo(f"nll {res.nll:.6g} (restart {res.restart_index}, converged={res.converged})")


def _weights_from_doc(doc: dict, key: str) -> tuple[PolcmGraph, np.ndarray]:
    g = graph_from_dict(doc["graph"] if "graph" in doc else doc)
    if key not in doc:
        raise ValueError(f"missing {key!r}")
    f = weights_from_edges(g, {(int(a), int(b)): float(v) for a, b, v in doc[key]})
    return g, f


@main.command("eval")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--estimate", "estimate_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--metric", type=click.Choice(["gs", "ot"]), default="gs", show_default=True)
@click.option("--full-q", is_flag=True, help="Rotate all rows, not only latent rows.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--quiet", is_flag=True)
@_fail_on_bad_input
def eval_cmd(truth, estimate_path, metric, full_q, seed, out, quiet):
    """Score an estimate against ground truth."""
    with open(truth) as fh:
        tdoc = json.load(fh)
    with open(estimate_path) as fh:
        edoc = json.load(fh)
    gt, ft = _weights_from_doc(tdoc, "coefficients")
    ge, fe = _weights_from_doc(edoc, "f_hat")
    if (gt.num_latent, gt.num_observed) != (ge.num_latent, ge.num_observed) or gt.edges != ge.edges:
        raise ValueError("truth and estimate are on different graphs")
    mask = support_mask(gt)
    check_support(gt, fe)
    if metric == "gs":
        result = {"metric": "gs", "mse": mse_group_sign(ft, fe, mask)}
    else:
        r = mse_orthogonal(ft, fe, gt.num_latent, mask, full_q=full_q, seed=seed)
        result = {"metric": "ot", "mse": r.mse, "full_q": full_q, "q_star": r.q_star.tolist(), **r.diagnostics}
    _write_json(result, out, True)
    if not quiet:
        click.echo(f"{metric} mse: {result['mse']:.6g}")


@main.command("bench")
@click.option("--fixture", "fixture_names", multiple=True, help="Fixture name or graph file (repeatable).")
@click.option("--set", "fixture_set", type=click.Choice(["gs", "ot"]), default="gs", show_default=True)
@click.option("--sizes", default="2000,5000,10000", show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--methods", default="tr,lm", show_default=True)
@click.option("--misspec", default=None, help="'uniform' or 'lrelu:<alpha>'.")
@click.option("--restarts", default=30, show_default=True)
@click.option("--max-iters", default=5000, show_default=True)
@click.option("--generated", default=0, show_default=True, help="Add this many random graphs.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="bench_out", show_default=True)
@click.option("--quiet", is_flag=True)
@_fail_on_bad_input
def bench_cmd(fixture_names, fixture_set, sizes, seeds, methods, misspec, restarts, max_iters, generated, out_dir, quiet):
    """Run the simulate, estimate and score loop over fixtures, sizes and seeds."""
    if fixture_names:
        names = tuple(fixture_names)
    else:
        names = fixtures.GS_FIXTURES if fixture_set == "gs" else fixtures.OT_FIXTURES
    spec = bench_mod.BenchSpec(
        fixtures=names,
        sample_sizes=tuple(int(s) for s in sizes.split(",")),
        seeds=tuple(int(s) for s in seeds.split(",")),
        methods=tuple(m.strip() for m in methods.split(",")),
        misspec=bench_mod.Misspec.parse(misspec),
        metric=fixture_set,
        restarts=restarts,
        max_iters=max_iters,
        generated=generated,
    )

    def progress(r):
        if not quiet:
            click.echo(f"{r.fixture:<22} {r.method:<3} K={r.k:<6} seed={r.seed} {r.metric}={r.value:.5f} ({r.wall_ms / 1000:.1f}s)")

    results = bench_mod.run_bench(spec, progress=progress)
    bench_mod.write_results(results, spec, out_dir)
    if not quiet:
        click.echo(bench_mod.format_table(bench_mod.summarize(results)))


if __name__ == "__main__":
    main()
