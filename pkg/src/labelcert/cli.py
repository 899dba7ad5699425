"""Command-line surface: precompute, certify, verify, attack, evaluate, sweep-q.

Certificates stream as JSON lines; summaries and curves are CSV. All outputs
are pure functions of the input files, flags, and seed. Exit codes: 0
success, 2 validation error, 3 numerical non-convergence.
"""
from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from .attack import robustness_curve
from .certify import certify_point
from .data import SmoothingConfig, load_dataset, parse_feature_csv, parse_label_file
from .errors import SolverError, ValidationError
from .multiclass import predict_and_certify_multiclass
from .regression import alpha_for, load_artifact, save_artifact, train
from .sampling import mc_estimate
from .tight import TightTable, get_or_build_table

DEFAULT_FLIP_COUNTS = (1, 10, 25, 50, 100, 200)


def _log(msg: str) -> None:
    click.echo(msg, err=True)


def default_cache_dir() -> str:
    env = os.environ.get("LABELCERT_CACHE")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "labelcert")


def _parse_lambda(value: str) -> float | None:
    if value == "auto":
        return None
    try:
        lam = float(value)
    except ValueError:
        raise ValidationError(f"--lambda must be 'auto' or a number, got {value!r}")
    if lam < 0:
        raise ValidationError(f"--lambda must be >= 0, got {lam}")
    return lam


def _parse_counts(text: str) -> tuple[int, ...]:
    try:
        counts = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"--flip-counts must be comma-separated integers, got {text!r}")
    if any(c < 0 for c in counts):
        raise ValidationError("flip counts must be >= 0")
    return counts


def _need_table(bound: str, cfg: SmoothingConfig, n: int, cache_dir: str):
    if bound == "kl":
        return None
    if cfg.K != 2:
        raise ValidationError(
            "the tight bound is binary-only; use --bound kl for K > 2"
        )
    return get_or_build_table(
        cfg.q, n, cfg.precision_bits, cache_dir=cache_dir, log=_log
    )


@click.group()
def cli():
    """Pointwise-certified linear classification under training-label flips."""


@cli.command()
@click.option("--features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--classes", "K", default=2, show_default=True, type=int)
@click.option("--q", required=True, type=float, help="flip probability")
@click.option("--lambda", "lam", default="auto", show_default=True,
              help="ridge strength: 'auto' (variance heuristic) or a number")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def precompute(features, labels, K, q, lam, out):
    """Train: estimate lambda, build the kernel matrix, write the model artifact."""
    SmoothingConfig(q=q, K=K)  # validate early
    dataset = load_dataset(features, labels, K)
    model = train(dataset.features, dataset.labels, q, K, lam=_parse_lambda(lam))
    save_artifact(model, dataset.labels, K, out)
    _log(f"wrote {out} (n={model.n}, k={model.k}, lambda={model.lam:.6g})")


_worker: dict = {}


def _init_worker(artifact_path, q, precision_bits, bound, table_doc):
    model, labels, K = load_artifact(artifact_path)
    _worker["model"] = model
    _worker["labels"] = labels
    _worker["cfg"] = SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
    _worker["bound"] = bound
    _worker["table"] = TightTable(**table_doc) if table_doc else None


def _certify_one(args):
    index, row = args
    cfg = _worker["cfg"]
    x = np.asarray(row)
    if cfg.K == 2:
        cert = certify_point(
            _worker["model"], _worker["labels"], x, cfg, table=_worker["table"]
        )
        return cert.as_record(index)
    cert = predict_and_certify_multiclass(_worker["model"], _worker["labels"], x, cfg)
    return cert.as_record(index)


def _cert_radius(record: dict, bound: str) -> int:
    if "r_tight" in record and record["r_tight"] is not None and bound != "kl":
        return record["r_tight"]
    return record["r_kl"]


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-labels", default=None, type=click.Path(exists=True, dir_okay=False),
              help="optional; summary reports certified accuracy instead of certified fraction")
@click.option("--q", required=True, type=float)
@click.option("--bound", default="both", show_default=True,
              type=click.Choice(["kl", "tight", "both"]))
@click.option("--precision-bits", default=256, show_default=True, type=int)
@click.option("--flip-counts", default=",".join(str(c) for c in DEFAULT_FLIP_COUNTS),
              show_default=True)
@click.option("--table-cache", default=None, type=click.Path(file_okay=False),
              help="tight-table cache dir (default $LABELCERT_CACHE or ~/.cache/labelcert)")
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="JSON-lines certificates")
@click.option("--summary", default=None, type=click.Path(dir_okay=False),
              help="CSV of certified accuracy at the chosen flip counts")
def certify(model_path, test_features, test_labels, q, bound, precision_bits,
            flip_counts, table_cache, workers, out, summary):
    """Emit one certificate per test point plus an accuracy summary."""
    model, labels, K = load_artifact(model_path)
    cfg = SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
    counts = _parse_counts(flip_counts)
    cache_dir = table_cache or default_cache_dir()
    table = _need_table(bound, cfg, model.n, cache_dir)
    try:
        X = parse_feature_csv(test_features).values
    except ValidationError as exc:
        if "empty feature file" not in str(exc):
            raise
        X = np.zeros((0, model.k))
    if X.shape[0] and X.shape[1] != model.k:
        raise ValidationError(
            f"test features have {X.shape[1]} columns, model expects {model.k}"
        )
    yt = None
    if test_labels is not None:
        yt = parse_label_file(test_labels, K).labels
        if yt.shape[0] != X.shape[0]:
            raise ValidationError("test label count does not match test features")

    table_doc = None
    if table is not None:
        table_doc = {
            "q": table.q,
            "precision_bits": table.precision_bits,
            "complements": table.complements,
            "saturated": table.saturated,
        }
    rows = list(enumerate(X))
    if workers > 1 and rows:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(model_path, q, precision_bits, bound, table_doc),
        ) as pool:
            records = list(pool.map(_certify_one, rows, chunksize=8))
    else:
        _init_worker(model_path, q, precision_bits, bound, table_doc)
        records = [_certify_one(r) for r in rows]

    with open(out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    _log(f"wrote {len(records)} certificates to {out}")

    if summary is not None:
        with open(summary, "w", encoding="utf-8") as fh:
            if yt is None:
                fh.write("flips,certified_fraction\n")
                for r in counts:
                    frac = (
                        float(np.mean([_cert_radius(rec, bound) >= r for rec in records]))
                        if records else 0.0
                    )
                    fh.write(f"{r},{frac!r}\n")
            else:
                fh.write("flips,certified_accuracy\n")
                for r in counts:
                    acc = (
                        float(np.mean([
                            rec["prediction"] == yt[i] and _cert_radius(rec, bound) >= r
                            for i, rec in enumerate(records)
                        ]))
                        if records else 0.0
                    )
                    fh.write(f"{r},{acc!r}\n")
        _log(f"wrote summary to {summary}")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--q", required=True, type=float)
@click.option("--precision-bits", default=256, show_default=True, type=int)
@click.option("--samples", default=100_000, show_default=True, type=int)
@click.option("--delta", default=0.001, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def verify(model_path, test_features, q, precision_bits, samples, delta, seed, out):
    """Compare analytic certificates against Monte Carlo estimates per point."""
    model, labels, K = load_artifact(model_path)
    cfg = SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
    X = parse_feature_csv(test_features).values
    if X.shape[0] and X.shape[1] != model.k:
        raise ValidationError(
            f"test features have {X.shape[1]} columns, model expects {model.k}"
        )
    agree_all = True
    with open(out, "w", encoding="utf-8") as fh:
        for idx, x in enumerate(X):
            if K == 2:
                cert = certify_point(model, labels, x, cfg)
            else:
                cert = predict_and_certify_multiclass(model, labels, x, cfg)
            est = mc_estimate(
                alpha_for(model, x), labels, cfg, samples, delta, seed + idx
            )
            agree = est.g_hat == cert.prediction
            agree_all = agree_all and agree
            fh.write(json.dumps({
                "index": idx,
                "prediction": cert.prediction,
                "analytic_p_star": cert.p_star,
                "mc_g": est.g_hat,
                "mc_G_bound": est.G_bound,
                "mc_vote_fraction": est.vote_fraction,
                "mc_abstained": est.abstained,
                "agree": agree,
            }) + "\n")
    _log(f"wrote {X.shape[0]} verification records to {out}; "
         f"all predictions agree: {agree_all}")


def _load_pair(features, labels, K):
    return load_dataset(features, labels, K)


@cli.command()
@click.option("--features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--classes", "K", default=2, show_default=True, type=int)
@click.option("--q", required=True, type=float)
@click.option("--mode", default="undefended", show_default=True,
              type=click.Choice(["defended", "undefended"]))
@click.option("--bound", default="both", show_default=True,
              type=click.Choice(["kl", "tight", "both"]))
@click.option("--lambda", "lam", default="auto", show_default=True)
@click.option("--budget", default=None, type=int)
@click.option("--precision-bits", default=256, show_default=True, type=int)
@click.option("--table-cache", default=None, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def attack(features, labels, test_features, test_labels, K, q, mode, bound,
           lam, budget, precision_bits, table_cache, out):
    """Greedy label-flip attack curve (empirical robustness upper bound)."""
    train_set = _load_pair(features, labels, K)
    test_set = _load_pair(test_features, test_labels, K)
    cfg = SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
    table = None
    if mode == "defended":
        cache_dir = table_cache or default_cache_dir()
        table = _need_table(bound, cfg, train_set.n, cache_dir)
    curve = robustness_curve(
        train_set, test_set, cfg, mode=mode, table=table, budget=budget,
        lam=_parse_lambda(lam), log=_log,
    )
    with open(out, "w", encoding="utf-8") as fh:
        curve.write_csv(fh)
    _log(f"wrote {mode} attack curve to {out}")


@cli.command()
@click.option("--features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--classes", "K", default=2, show_default=True, type=int)
@click.option("--q", required=True, type=float)
@click.option("--bound", default="both", show_default=True,
              type=click.Choice(["kl", "tight", "both"]))
@click.option("--lambda", "lam", default="auto", show_default=True)
@click.option("--budget", default=None, type=int)
@click.option("--precision-bits", default=256, show_default=True, type=int)
@click.option("--table-cache", default=None, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def evaluate(features, labels, test_features, test_labels, K, q, bound, lam,
             budget, precision_bits, table_cache, out):
    """Certified and attacked accuracy curves for the smoothed classifier."""
    train_set = _load_pair(features, labels, K)
    test_set = _load_pair(test_features, test_labels, K)
    cfg = SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
    cache_dir = table_cache or default_cache_dir()
    table = _need_table(bound, cfg, train_set.n, cache_dir)
    curve = robustness_curve(
        train_set, test_set, cfg, mode="defended", table=table, budget=budget,
        lam=_parse_lambda(lam), log=_log,
    )
    with open(out, "w", encoding="utf-8") as fh:
        curve.write_csv(fh)
    _log(f"wrote evaluation curves to {out}")


@cli.command(name="sweep-q")
@click.option("--features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-features", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--classes", "K", default=2, show_default=True, type=int)
@click.option("--q-grid", required=True, help="comma-separated flip probabilities")
@click.option("--bound", default="both", show_default=True,
              type=click.Choice(["kl", "tight", "both"]))
@click.option("--lambda", "lam", default="auto", show_default=True)
@click.option("--budget", default=None, type=int)
@click.option("--precision-bits", default=256, show_default=True, type=int)
@click.option("--flip-counts", default=",".join(str(c) for c in DEFAULT_FLIP_COUNTS),
              show_default=True)
@click.option("--baseline", is_flag=True, help="append constant-classifier rows")
@click.option("--table-cache", default=None, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def sweep_q(features, labels, test_features, test_labels, K, q_grid, bound,
            lam, budget, precision_bits, flip_counts, baseline, table_cache, out):
    """One defended curve per q, as a tidy CSV for overlay plotting."""
    train_set = _load_pair(features, labels, K)
    test_set = _load_pair(test_features, test_labels, K)
    try:
        qs = [float(x) for x in q_grid.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--q-grid must be comma-separated floats, got {q_grid!r}")
    counts = _parse_counts(flip_counts)
    rows_r = sorted(set((0,) + counts))
    cache_dir = table_cache or default_cache_dir()
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("q,flips,certified_acc,attacked_acc,nonrobust_acc\n")
        for q in qs:
            cfg = SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
            table = _need_table(bound, cfg, train_set.n, cache_dir)
            curve = robustness_curve(
                train_set, test_set, cfg, mode="defended", table=table,
                budget=budget, lam=_parse_lambda(lam), log=_log,
            )
            nonrobust = float(curve.certified[0])
            for r in rows_r:
                if r > train_set.n:
                    continue
                fh.write(
                    f"{q!r},{r},{float(curve.certified[r])!r},"
                    f"{float(curve.attacked[r])!r},{nonrobust!r}\n"
                )
        if baseline:
            lab = train_set.labels.labels
            const = int(np.bincount(lab, minlength=K).argmax())
            acc = float(np.mean(test_set.labels.labels == const))
            for r in rows_r:
                if r > train_set.n:
                    continue
                fh.write(f"baseline,{r},{acc!r},{acc!r},{acc!r}\n")
    _log(f"wrote sweep to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except SolverError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3
    return 0


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
