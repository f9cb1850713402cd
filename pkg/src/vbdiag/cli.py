"""Command-line pipeline driver.

Experiments (generation, labeling, training, evaluation, tuning,
explanation) run locally and deterministically for a fixed seed; the
`serve` command hosts a frozen model over HTTP. Output files carry no
timestamps, so a rerun with the same seeds is byte-identical.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import cohort as cohort_mod
from . import explain as explain_mod
from . import persist, reports, semisup, service
from .domain import FEATURE_ORDER, Dataset, Label, load_unit_rules
from .evaluation import (
    CrpRule,
    band_analysis,
    cross_validate,
    cross_validate_crp_rule,
    crp_rule_predict,
    fit_crp_rule,
    grouped_stratified_kfold,
)
from .generator import default_generator_config, generate_cohort, load_generator_config
from .learners import ClassifierSpec, Family, fit_classifier
from .tune import DEFAULT_SEARCH_SPACES, random_search, trials_to_rows


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _load_dataset(path: str, units: str | None = None) -> Dataset:
    rules = load_unit_rules(units) if units else None
    dataset, _ = cohort_mod.ingest_csv(path, rules)
    return dataset


def _family(name: str) -> Family:
    try:
        return Family(name.upper())
    except ValueError:
        raise click.BadParameter(f"unknown family {name!r}; choose from "
                                 + ", ".join(f.value for f in Family)) from None


def _background_sample(dataset: Dataset, size: int, seed: int) -> np.ndarray:
    X = dataset.feature_matrix()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(X), size=min(size, len(X)), replace=False)
    return X[np.sort(idx)]


@click.group()
def main() -> None:
    """Virus-vs-bacteria blood panel toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Generator config file (default: shipped calibration).")
@click.option("--n", "n_cases", type=int, required=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def synth(config_path, n_cases, seed, out_path):
    """Generate a synthetic cohort CSV."""
    config = load_generator_config(config_path) if config_path else default_generator_config()
    dataset = generate_cohort(config, n_cases, seed)
    cohort_mod.export_csv(dataset, out_path)
    counts = dataset.class_counts()
    click.echo(f"wrote {len(dataset)} cases to {out_path} "
               f"({counts[Label.BACTERIA]} bacteria / {counts[Label.VIRUS]} virus)")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--units", type=click.Path(exists=True), default=None,
              help="Unit table (default: shipped table).")
@click.option("--out", "out_path", type=click.Path(), required=True)
def ingest(in_path, units, out_path):
    """Canonicalize and filter a raw cohort CSV."""
    rules = load_unit_rules(units) if units else None
    dataset, report = cohort_mod.ingest_csv(in_path, rules)
    cohort_mod.export_csv(dataset, out_path)
    click.echo(reports.filter_report_text(report.stages), nl=False)
    click.echo(f"wrote {len(dataset)} cases to {out_path}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out-train", type=click.Path(), required=True)
@click.option("--out-test", type=click.Path(), required=True)
def split(in_path, test_fraction, seed, out_train, out_test):
    """Grouped stratified train/test split."""
    dataset = _load_dataset(in_path)
    train, test = cohort_mod.grouped_stratified_split(
        dataset, cohort_mod.SplitSpec(test_fraction=test_fraction, seed=seed)
    )
    cohort_mod.export_csv(train, out_train)
    cohort_mod.export_csv(test, out_test)
    click.echo(f"train {len(train)} cases -> {out_train}; test {len(test)} cases -> {out_test}")


@main.command(name="semisup")
@click.option("--labeled", type=click.Path(exists=True), required=True)
@click.option("--unlabeled", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=0.70, show_default=True)
@click.option("--family", default="GBT", show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out-train", type=click.Path(), required=True,
              help="Assembled training set (labeled + confident additions).")
@click.option("--out-audit", type=click.Path(), default=None,
              help="Audit CSV: per-case probability and decision.")
def semisup_cmd(labeled, unlabeled, threshold, family, k, seed, out_train, out_audit):
    """Noise detection, bootstrap labeling, and training-set assembly."""
    labeled_ds = _load_dataset(labeled)
    unlabeled_ds = _load_dataset(unlabeled)
    spec = ClassifierSpec(family=_family(family))
    noise = semisup.detect_noise(labeled_ds, spec, k=k, seed=seed)
    outcome = semisup.bootstrap_label(labeled_ds, unlabeled_ds, spec, threshold, seed=seed)
    train, noise = semisup.assemble_training(labeled_ds, noise, outcome)
    cohort_mod.export_csv(train, out_train)
    if out_audit:
        rows = [["case_id", "probability", "decision"]]
        added = {c.case_id: c.label.value for c in outcome.labeled_additions.cases}
        prob_of = dict(outcome.adopted_probabilities)
        for cid, label_value in sorted(added.items()):
            rows.append([cid, repr(prob_of[cid]), f"labeled:{label_value}"])
        for cid, p in outcome.discarded:
            rows.append([cid, repr(p), "discarded"])
        for cid in sorted(noise.case_ids):
            rows.append([cid, repr(noise.probability_of_case[cid]), "noise"])
        _write_csv(Path(out_audit), rows)
    click.echo(
        f"assembled {len(train)} training cases "
        f"({len(outcome.labeled_additions.cases)} bootstrap-labeled, "
        f"{len(outcome.discarded)} discarded, {len(noise.case_ids)} noise)"
    )
    if out_audit:
        click.echo(f"audit -> {out_audit}")


@main.command()
@click.option("--family", default="GBT", show_default=True)
@click.option("--params", default=None, help="Hyperparameters as a JSON object.")
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out-model", type=click.Path(), required=True)
@click.option("--background-size", type=int, default=100, show_default=True)
def train(family, params, train_path, seed, out_model, background_size):
    """Train one model and persist it as a verified bundle."""
    dataset = _load_dataset(train_path)
    hyper = json.loads(params) if params else {}
    spec = ClassifierSpec(family=_family(family), hyperparameters=hyper)
    fitted = fit_classifier(
        spec, dataset.feature_matrix(), dataset.label_vector(),
        seed=seed, feature_order=FEATURE_ORDER,
    )
    background = _background_sample(dataset, background_size, seed)
    bundle = persist.build_bundle(
        fitted,
        model_id=persist.make_model_id(seed, len(FEATURE_ORDER)),
        seed=seed,
        background=background,
        explanation_seed=seed,
        training_extra={"n_train": len(dataset)},
    )
    persist.save_model(bundle, out_model)
    click.echo(f"trained {spec.family.value} on {len(dataset)} cases -> {out_model} "
               f"(model_id {bundle.model_id})")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--family", default="GBT", show_default=True)
@click.option("--params", default=None, help="Hyperparameters as a JSON object.")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--noise", "noise_path", type=click.Path(exists=True), default=None,
              help="CSV with a case_id column; rows with a decision column "
                   "count only when marked noise (semisup audit format).")
@click.option("--out", "out_path", type=click.Path(), default=None)
def cv(in_path, family, params, k, seed, noise_path, out_path):
    """Grouped stratified k-fold cross-validation."""
    dataset = _load_dataset(in_path)
    noise = frozenset()
    if noise_path:
        with open(noise_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        noise = frozenset(
            r["case_id"] for r in rows
            if r.get("decision", "noise") == "noise"
        )
    hyper = json.loads(params) if params else {}
    spec = ClassifierSpec(family=_family(family), hyperparameters=hyper)
    report = cross_validate(spec, dataset, k, seed, noise_set=noise)
    table = {spec.family.value: report}
    click.echo(reports.cv_table(table), nl=False)
    if out_path:
        _write_csv(Path(out_path), reports.cv_csv_rows(table))
        click.echo(f"per-fold metrics -> {out_path}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--families", default="GBT,RF,DT,KNN,LR", show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out-dir", type=click.Path(), default=None)
def compare(in_path, families, k, seed, out_dir):
    """Cross-validated comparison of learners plus the CRP rule,
    with pairwise significance tests."""
    dataset = _load_dataset(in_path)
    clinical = dataset
    assignment = grouped_stratified_kfold(clinical, k, seed)
    table: dict[str, object] = {}
    for name in (f.strip() for f in families.split(",") if f.strip()):
        family = _family(name)
        spec = ClassifierSpec(family=family)
        table[family.value] = cross_validate(spec, dataset, k, seed, fold_assignment=assignment)
    table["CRP"] = cross_validate_crp_rule(dataset, k, seed, fold_assignment=assignment)
    text = reports.cv_table(table) + "\n" + reports.pairwise_comparison_table(table)
    click.echo(text, nl=False)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(text)
        _write_csv(out / "comparison.csv", reports.cv_csv_rows(table))
        click.echo(f"reports -> {out}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True,
              help="Evaluation dataset (canonical CSV).")
@click.option("--train", "train_path", type=click.Path(exists=True), default=None,
              help="Dataset used to fit the CRP rule (default: --in).")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--lo", type=float, default=10.0, show_default=True)
@click.option("--hi", type=float, default=40.0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def band(in_path, train_path, model_path, lo, hi, out_path):
    """CRP band composition, baselines, and model-vs-rule metrics."""
    dataset = _load_dataset(in_path)
    rule_data = _load_dataset(train_path) if train_path else dataset
    rule = fit_crp_rule(rule_data)
    bundle = persist.load_model(model_path)
    classifier = bundle.to_classifier()
    probas = classifier.predict_proba(dataset.feature_matrix())
    report = band_analysis(dataset, probas, rule, lo, hi)
    click.echo(f"CRP rule threshold: {rule.threshold:g} mg/L")
    click.echo(reports.band_report_text(report), nl=False)
    if out_path:
        _write_csv(Path(out_path), reports.band_csv_rows(report))
        click.echo(f"band report -> {out_path}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--family", default="GBT", show_default=True)
@click.option("--budget", type=int, default=60, show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def tune(in_path, family, budget, k, seed, out_path):
    """Random-search hyperparameter optimization."""
    dataset = _load_dataset(in_path)
    fam = _family(family)
    records = random_search(DEFAULT_SEARCH_SPACES[fam], fam, dataset, budget, k, seed)
    best = records[0]
    click.echo(f"best trial #{best.trial_index}: mean accuracy {best.mean_accuracy:.4f}")
    click.echo(f"config: {json.dumps(best.config, sort_keys=True)}")
    if out_path:
        _write_csv(Path(out_path), trials_to_rows(records))
        click.echo(f"trial log -> {out_path}")


@main.command(name="explain")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--background", "background_path", type=click.Path(exists=True), default=None,
              help="Background sample CSV (default: the bundle's stored sample).")
@click.option("--permutations", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--band-edges", default="0,10,40,1000000", show_default=True,
              help="Comma-separated CRP edges for the band importance export.")
@click.option("--out-beeswarm", type=click.Path(), default=None)
@click.option("--out-bands", type=click.Path(), default=None)
def explain_cmd(model_path, data_path, background_path, permutations, seed,
                band_edges, out_beeswarm, out_bands):
    """Shapley explanations: beeswarm and band-importance exports."""
    bundle = persist.load_model(model_path)
    classifier = bundle.to_classifier()
    dataset = _load_dataset(data_path)
    X = dataset.feature_matrix()
    background = (
        _load_dataset(background_path).feature_matrix()
        if background_path
        else bundle.background
    )
    names = list(bundle.feature_order)
    if out_beeswarm:
        rows = explain_mod.beeswarm_rows(
            classifier, X, background, names,
            [c.case_id for c in dataset.cases],
            n_permutations=permutations, seed=seed,
        )
        out = [["case_id", "feature", "feature_value", "phi"]]
        out += [[cid, f, repr(v), repr(p)] for cid, f, v, p in rows]
        _write_csv(Path(out_beeswarm), out)
        click.echo(f"beeswarm data -> {out_beeswarm}")
    if out_bands:
        edges = [float(e) for e in band_edges.split(",")]
        tables = explain_mod.importance_by_crp_band(
            classifier, X, background, edges, names,
            n_permutations=permutations, seed=seed,
        )
        out = [["band_lo", "band_hi", "feature", "mean_abs_phi"]]
        for table in tables:
            lo, hi = table.band
            for feature, value in table.entries:
                out.append([repr(lo), repr(hi), feature, repr(value)])
        _write_csv(Path(out_bands), out)
        click.echo(f"band importance -> {out_bands}")
    ranking = explain_mod.global_importance(
        classifier, X, background, names, n_permutations=permutations, seed=seed
    )
    click.echo("global importance (mean |phi|):")
    for feature, value in ranking.entries[:8]:
        click.echo(f"  {feature:20s} {value:.5f}")


@main.command(name="crp-rule")
@click.option("--fit", "do_fit", is_flag=True, default=False)
@click.option("--apply", "apply_crp", type=float, default=None,
              help="Classify one CRP value (mg/L) with --threshold.")
@click.option("--in", "in_path", type=click.Path(exists=True), default=None)
@click.option("--threshold", type=float, default=None)
def crp_rule(do_fit, apply_crp, in_path, threshold):
    """Fit the CRP cutoff on a dataset, or apply a fitted cutoff."""
    if do_fit == (apply_crp is not None):
        raise click.UsageError("use exactly one of --fit or --apply")
    if do_fit:
        if not in_path:
            raise click.UsageError("--fit requires --in")
        rule = fit_crp_rule(_load_dataset(in_path))
        click.echo(f"CRP_opt = {rule.threshold:g} mg/L")
    else:
        if threshold is None:
            raise click.UsageError("--apply requires --threshold")
        label = crp_rule_predict(CrpRule(threshold), apply_crp)
        click.echo(label.value)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(model_path, host, port):
    """Serve a frozen model bundle over HTTP."""
    service.serve(model_path, host=host, port=port)


if __name__ == "__main__":
    main(sys.argv[1:])
