"""Model persistence: a human-diffable structured text document with an
embedded content digest.

The payload stores trees as flat node arrays with explicit child
indices; floats are serialized with shortest-round-trip repr, so a
saved and reloaded model predicts bit-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .domain import CANONICAL_UNITS, FEATURE_ORDER
from .learners import ClassifierSpec, Family, FittedClassifier, LogisticModel, StandardScaler
from .trees import BoostedEnsemble, BoostParams, Forest, Tree

FORMAT_VERSION = 1


class PersistError(ValueError):
    pass


class DigestMismatch(PersistError):
    pass


class UnsupportedVersion(PersistError):
    pass


class MalformedFile(PersistError):
    pass


@dataclass(frozen=True)
class ModelBundle:
    format_version: int
    model_id: str
    family: Family
    feature_order: tuple[str, ...]
    feature_units: tuple[str, ...]
    scaler: StandardScaler | None
    payload: Mapping[str, Any]
    training: Mapping[str, Any]
    created_at: str
    explanation_seed: int
    background: np.ndarray  # reference sample for explanations

    def __post_init__(self) -> None:
        object.__setattr__(self, "payload", dict(self.payload))
        object.__setattr__(self, "training", dict(self.training))

    def to_classifier(self) -> FittedClassifier:
        spec = ClassifierSpec(
            family=self.family,
            hyperparameters=dict(self.training.get("hyperparameters", {})),
        )
        model = _payload_to_model(self.family, self.payload, self.feature_order)
        return FittedClassifier(spec=spec, scaler=self.scaler, model=model)


def make_model_id(seed: int, n_features: int, when: datetime | None = None) -> str:
    when = when or datetime.now(timezone.utc)
    return f"VB_{when.strftime('%Y%m%d')}_{seed}_{n_features}"


def build_bundle(
    fitted: FittedClassifier,
    model_id: str,
    seed: int,
    background: np.ndarray,
    explanation_seed: int = 0,
    feature_order: tuple[str, ...] = FEATURE_ORDER,
    training_extra: Mapping[str, Any] | None = None,
    created_at: str | None = None,
) -> ModelBundle:
    training: dict[str, Any] = {
        "seed": seed,
        "hyperparameters": dict(fitted.spec.hyperparameters),
    }
    if training_extra:
        training.update(training_extra)
    return ModelBundle(
        format_version=FORMAT_VERSION,
        model_id=model_id,
        family=fitted.spec.family,
        feature_order=tuple(feature_order),
        feature_units=tuple(CANONICAL_UNITS.get(f, "1") for f in feature_order),
        scaler=fitted.scaler,
        payload=_model_to_payload(fitted.spec.family, fitted.model),
        training=training,
        created_at=created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        explanation_seed=explanation_seed,
        background=np.asarray(background, dtype=np.float64),
    )


# --- payload (de)serialization ------------------------------------------------


def _tree_to_doc(tree: Tree) -> dict[str, Any]:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "count_b": tree.count_b.tolist(),
        "count_v": tree.count_v.tolist(),
        "depth": tree.depth,
        "n_leaves": tree.n_leaves,
    }


def _doc_to_tree(doc: Mapping[str, Any], n_features: int) -> Tree:
    try:
        return Tree(
            feature=np.asarray(doc["feature"], dtype=np.int32),
            threshold=np.asarray(doc["threshold"], dtype=np.float64),
            left=np.asarray(doc["left"], dtype=np.int32),
            right=np.asarray(doc["right"], dtype=np.int32),
            value=np.asarray(doc["value"], dtype=np.float64),
            count_b=np.asarray(doc["count_b"], dtype=np.float64),
            count_v=np.asarray(doc["count_v"], dtype=np.float64),
            n_features=n_features,
            depth=int(doc["depth"]),
            n_leaves=int(doc["n_leaves"]),
        )
    except KeyError as exc:
        raise MalformedFile(f"tree document missing field {exc}") from None


def _model_to_payload(family: Family, model: Any) -> dict[str, Any]:
    if family is Family.GBT:
        ens: BoostedEnsemble = model
        return {
            "base_score": ens.base_score,
            "params": {
                "n_rounds": ens.params.n_rounds,
                "max_depth": ens.params.max_depth,
                "learning_rate": ens.params.learning_rate,
                "l2_reg": ens.params.l2_reg,
                "min_split_gain": ens.params.min_split_gain,
                "min_child_hessian": ens.params.min_child_hessian,
                "subsample_rows": ens.params.subsample_rows,
                "subsample_features": ens.params.subsample_features,
                "seed": ens.params.seed,
            },
            "trees": [_tree_to_doc(t) for t in ens.trees],
        }
    if family is Family.RF:
        forest: Forest = model
        return {"seed": forest.seed, "trees": [_tree_to_doc(t) for t in forest.trees]}
    if family is Family.DT:
        return {"tree": _tree_to_doc(model)}
    if family is Family.LR:
        lr: LogisticModel = model
        return {
            "coef": lr.coef.tolist(),
            "intercept": lr.intercept,
            "converged": lr.converged,
            "n_iterations": lr.n_iterations,
        }
    train, labels, k = model
    return {"k": k, "train": train.tolist(), "labels": labels.tolist()}


def _payload_to_model(family: Family, payload: Mapping[str, Any], feature_order: tuple[str, ...]) -> Any:
    n_features = len(feature_order)
    try:
        if family is Family.GBT:
            params = BoostParams(**payload["params"])
            trees = tuple(_doc_to_tree(d, n_features) for d in payload["trees"])
            return BoostedEnsemble(
                base_score=float(payload["base_score"]),
                trees=trees,
                params=params,
                feature_order=feature_order,
            )
        if family is Family.RF:
            trees = tuple(_doc_to_tree(d, n_features) for d in payload["trees"])
            return Forest(trees, n_features, int(payload["seed"]))
        if family is Family.DT:
            return _doc_to_tree(payload["tree"], n_features)
        if family is Family.LR:
            return LogisticModel(
                coef=np.asarray(payload["coef"], dtype=np.float64),
                intercept=float(payload["intercept"]),
                converged=bool(payload["converged"]),
                n_iterations=int(payload["n_iterations"]),
            )
        return (
            np.asarray(payload["train"], dtype=np.float64),
            np.asarray(payload["labels"], dtype=np.float64),
            int(payload["k"]),
        )
    except KeyError as exc:
        raise MalformedFile(f"payload missing field {exc}") from None


# --- document assembly ----------------------------------------------------------


def _bundle_to_doc(bundle: ModelBundle) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "format_version": bundle.format_version,
        "model_id": bundle.model_id,
        "family": bundle.family.value,
        "feature_order": list(bundle.feature_order),
        "feature_units": list(bundle.feature_units),
        "payload": dict(bundle.payload),
        "training": dict(bundle.training),
        "created_at": bundle.created_at,
        "explanation_seed": bundle.explanation_seed,
        "background": bundle.background.tolist(),
    }
    if bundle.scaler is not None:
        doc["scaler"] = {
            "mean": bundle.scaler.mean.tolist(),
            "sd": bundle.scaler.sd.tolist(),
            "constant_features": list(bundle.scaler.constant_features),
        }
    else:
        doc["scaler"] = None
    return doc


def _doc_digest(doc: Mapping[str, Any]) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    doc = _bundle_to_doc(bundle)
    doc["digest"] = _doc_digest(doc)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_model(path: str | Path) -> ModelBundle:
    """Read, digest-verify and reconstruct a saved model."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "digest" not in doc:
        raise MalformedFile(f"{path}: not a model document")
    stored_digest = doc.pop("digest")
    if _doc_digest(doc) != stored_digest:
        raise DigestMismatch(f"{path}: content does not match the embedded digest")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format_version {version} not supported")
    try:
        scaler_doc = doc["scaler"]
        scaler = None
        if scaler_doc is not None:
            scaler = StandardScaler(
                mean=np.asarray(scaler_doc["mean"], dtype=np.float64),
                sd=np.asarray(scaler_doc["sd"], dtype=np.float64),
                constant_features=tuple(scaler_doc["constant_features"]),
            )
        return ModelBundle(
            format_version=version,
            model_id=doc["model_id"],
            family=Family(doc["family"]),
            feature_order=tuple(doc["feature_order"]),
            feature_units=tuple(doc["feature_units"]),
            scaler=scaler,
            payload=doc["payload"],
            training=doc["training"],
            created_at=doc["created_at"],
            explanation_seed=int(doc["explanation_seed"]),
            background=np.asarray(doc["background"], dtype=np.float64),
        )
    except (KeyError, ValueError) as exc:
        raise MalformedFile(f"{path}: {exc}") from None
