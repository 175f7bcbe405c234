"""JSON container for trained models.

Layout (``format_version`` 1)::

    {
      "format": "penn-model",
      "format_version": 1,
      "topology":   {input_dim, hidden_dims, output_dim, static_mask, activation},
      "weights":    {"hidden_W[0]": [[...]], "hidden_b[0]": [...], ..., "var_b": [...]},
      "scaler":     {"mean": [...], "scale": [...]},
      "penn_config": {...}, "optimizer_config": {...},
      "intercept": bool, "distinct_encoder_inputs": bool,
      "feature_names": [...],
      "loss_trace": [{"mc_mse", "kl_total", "total"}, ...]
    }

Floats are written with Python's shortest round-trip repr, so loading
restores every weight bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

from penn.diffcore import NetworkTopology, NetworkWeights, check_weights
from penn.loss import LossBreakdown
from penn.trainer import OptimizerConfig, PennConfig, Standardizer, TrainedModel

FORMAT = "penn-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "topology": model.topology.to_dict(),
        "weights": model.weights.to_dict(),
        "scaler": model.scaler.to_dict(),
        "penn_config": model.penn_config.to_dict(),
        "optimizer_config": asdict(model.opt_config),
        "intercept": bool(model.intercept),
        "distinct_encoder_inputs": bool(model.distinct_encoder_inputs),
        "feature_names": list(model.feature_names),
        "loss_trace": [b.as_dict() for b in model.loss_trace],
    }


def model_from_dict(d: dict) -> TrainedModel:
    if d.get("format") != FORMAT:
        raise ModelFormatError(f"not a model file (format={d.get('format')!r})")
    if d.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {d.get('format_version')!r}")
    try:
        topology = NetworkTopology.from_dict(d["topology"])
        weights = NetworkWeights.from_dict(d["weights"], topology)
        check_weights(weights, topology)
        return TrainedModel(
            weights=weights,
            topology=topology,
            penn_config=PennConfig.from_dict(d["penn_config"]),
            opt_config=OptimizerConfig(**d["optimizer_config"]),
            scaler=Standardizer.from_dict(d["scaler"]),
            loss_trace=[LossBreakdown(**b) for b in d.get("loss_trace", [])],
            intercept=bool(d["intercept"]),
            distinct_encoder_inputs=bool(d["distinct_encoder_inputs"]),
            feature_names=tuple(d.get("feature_names", ())),
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc


def save_model(model: TrainedModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_dict(d)
