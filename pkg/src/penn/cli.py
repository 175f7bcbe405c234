"""Command-line workbench.

Every command resolves its parameters from built-in defaults, then an
optional TOML config file (keys at top level or under a table named after
the command), then explicit flags. The resolved parameters, input hashes,
artifact hashes and timings go to ``manifest.json`` in the output
directory; ``penn replay manifest.json`` reruns the command from it.

Exit codes: 0 success, 1 runtime failure, 2 usage or schema error,
3 missing or changed input file, 4 non-finite training loss.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from penn import capm, explain, modelio, modelsel, simlab
from penn.diffcore import NetworkTopology, backward, finite_difference_check, forward, init_weights
from penn.encoder import PosteriorParams
from penn.loss import penn_objective
from penn.prior import KERNELS, KernelSpec, build_kernel_weights
from penn.seeding import child_seed, stream
from penn.trainer import (
    EMPIRICAL_EPOCHS,
    SIMULATION_EPOCHS,
    Dataset,
    OptimizerConfig,
    PennConfig,
    TrainingError,
    train,
)

log = logging.getLogger("penn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_MISSING, EXIT_NONFINITE = 0, 1, 2, 3, 4
MANIFEST_VERSION = 1


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def usage_error(msg: str) -> CliError:
    return CliError(EXIT_USAGE, "usage", msg)


# --- parameter schema ------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # int, float, str, bool, path, int_list, float_list, str_list
    default: Any = None
    help: str = ""
    required: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _parse_list(value, item: Callable, name: str):
    if isinstance(value, str):
        value = [v for v in (s.strip() for s in value.split(",")) if v]
    if not isinstance(value, (list, tuple)):
        raise usage_error(f"'{name}' must be a list")
    try:
        return [item(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise usage_error(f"'{name}': {exc}") from None


def coerce(p: Param, value):
    if value is None:
        return None
    try:
        if p.kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"expected an integer, got {value!r}")
            return int(value)
        if p.kind == "float":
            if isinstance(value, bool):
                raise ValueError(f"expected a number, got {value!r}")
            return float(value)
        if p.kind in ("str", "path"):
            if not isinstance(value, str):
                raise ValueError(f"expected a string, got {value!r}")
            return value
        if p.kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError(f"expected true/false, got {value!r}")
    except ValueError as exc:
        raise usage_error(f"'{p.name}': {exc}") from None
    if p.kind == "int_list":
        return _parse_list(value, int, p.name)
    if p.kind == "float_list":
        return _parse_list(value, float, p.name)
    if p.kind == "str_list":
        return _parse_list(value, str, p.name)
    raise AssertionError(p.kind)


COMMON = [
    Param("seed", "int", 0, "root seed for all random streams"),
    Param("jobs", "int", 1, "parallel workers for grids and seeds"),
]

NET = [
    Param("lam", "float", 0.1, "KL penalty weight lambda"),
    Param("delta", "float", 0.2, "normalized regime count for the disjoint kernel"),
    Param("kernel", "str", "disjoint", f"prior kernel: {', '.join(KERNELS)}"),
    Param("bandwidth", "float", 1.0, "support radius of compact kernels"),
    Param("hidden", "int_list", [20, 20], "hidden layer sizes"),
    Param("activation", "str", "sigmoid", "sigmoid or tanh"),
    Param("draws", "int", 100, "Monte Carlo draws per epoch"),
    Param("epochs", "int", SIMULATION_EPOCHS, "training epochs"),
    Param("learning_rate", "float", 0.05, "Adam learning rate"),
]

DATA = [
    Param("data", "path", help="CSV with a header row", required=True),
    Param("target", "str", "y", "target column"),
    Param("features", "str_list", [], "decoder columns (default: all but target and encoder columns)"),
    Param("encoder", "str_list", [], "distinct encoder input columns (default: the decoder columns)"),
    Param("intercept", "bool", False, "prepend a constant column to the decoder"),
]

SCHEMAS: dict[str, list[Param]] = {
    "simulate": COMMON + [
        Param("n_values", "int_list", [250, 500, 1000], "sample sizes"),
        Param("rho_values", "float_list", [0.0, 0.3, 0.6], "input correlations"),
        Param("sigma_values", "float_list", [1.0, 2.0, 3.0], "noise standard deviations"),
        Param("seeds", "int_list", list(range(10)), "replication seeds"),
        Param("methods", "str_list", ["penn", "lime", "shapley"], f"subset of {', '.join(simlab.METHODS)}"),
        Param("design", "str", "oat", "oat (one factor at a time) or full"),
        Param("default_n", "int", 1000, "n held fixed while other factors vary"),
        Param("default_rho", "float", 0.0, "rho held fixed while other factors vary"),
        Param("default_sigma", "float", 1.0, "sigma held fixed while other factors vary"),
        Param("n_test", "int", 1000, "test sample size for RMSE"),
        Param("shapley_draws", "int", 100, "permutation draws per row"),
        Param("lime_samples", "int", 500, "LIME perturbations per row"),
        Param("lime_sigma", "float", 0.5, "LIME perturbation scale"),
    ] + NET,
    "train": COMMON + DATA + NET + [
        Param("static", "str_list", [], "decoder columns with static coefficients"),
    ],
    "explain": COMMON + DATA + [
        Param("model", "path", None, "trained model file (required for method penn)"),
        Param("methods", "str_list", ["penn", "lime", "shapley"], "penn, lime, shapley"),
        Param("black_box", "str", "mlp", "function explained by lime/shapley: mlp or penn"),
        Param("shapley_draws", "int", 100, "permutation draws per row"),
        Param("lime_samples", "int", 500, "LIME perturbations per row"),
        Param("lime_sigma", "float", 0.1, "LIME perturbation scale"),
    ],
    "cv": COMMON + DATA + NET + [
        Param("lambda_grid", "float_list", [0.0, 0.1, 1.0, 10.0, 100.0], "lambda values"),
        Param("delta_grid", "float_list", [0.0, 0.05, 0.2, 1.0], "delta values"),
        Param("v", "int", 10, "validation blocks"),
        Param("h", "int", 10, "observations masked on each side of a block"),
    ],
    "capm": COMMON + NET + [
        Param("returns", "path", help="returns.csv (date, r_f, r_m, sectors...)", required=True),
        Param("macro", "path", help="macro.csv (date, series...)", required=True),
        Param("yoy_window", "int", help="observations in the year-on-year change", required=True),
        Param("sectors", "str_list", [], "sectors to fit (default: all)"),
        Param("static_alpha", "bool", False, "hold alpha constant across dates"),
        Param("realtime_start", "int", 0, "first forecast row (0: skip real-time forecasts)"),
        Param("retrain_every", "int", 21, "rows between retrainings"),
        Param("rolling_window", "int", 0, "rolling-OLS window (0: skip)"),
    ],
    "capm-fixture": COMMON + [
        Param("periods", "int", 1200, "weekly observations"),
        Param("yoy_window", "int", 52, "observations in the year-on-year change"),
        Param("sectors", "str_list", ["S1"], "sector names"),
    ],
    "gradcheck": COMMON + [
        Param("n", "int", 20, "observations"),
        Param("k", "int", 3, "decoder coefficients"),
        Param("hidden", "int_list", [8, 8], "hidden layer sizes"),
        Param("draws", "int", 5, "Monte Carlo draws"),
        Param("lam", "float", 0.5, "KL penalty weight"),
        Param("delta", "float", 0.3, "normalized regime count"),
        Param("activation", "str", "sigmoid", "sigmoid or tanh"),
        Param("step", "float", 1e-5, "central-difference step"),
        Param("tolerance", "float", 1e-5, "maximum accepted relative error"),
    ],
}

# the CAPM pipeline trains on the empirical epoch budget unless told otherwise
EPOCH_DEFAULTS = {"capm": EMPIRICAL_EPOCHS}


def resolve(command: str, config: dict, flags: dict) -> dict:
    """defaults < config file < explicit flags, with type checks."""
    schema = {p.name: p for p in SCHEMAS[command]}
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise usage_error(f"config table [{command}] must be a table")
    top = {k: v for k, v in config.items() if not isinstance(v, dict)}
    merged = {**top, **section}
    unknown = sorted(set(merged) - set(schema))
    if unknown:
        raise usage_error(f"unknown config keys for '{command}': {', '.join(unknown)}")
    out = {}
    for name, p in schema.items():
        default = EPOCH_DEFAULTS.get(command, p.default) if name == "epochs" else p.default
        value = default
        if name in merged:
            value = coerce(p, merged[name])
        if flags.get(name) is not None:
            value = coerce(p, flags[name])
        if value is None and p.required:
            raise usage_error(f"missing required parameter '{name}' ({p.flag})")
        out[name] = value
    for name in ("jobs", "epochs", "draws", "n", "k", "v", "periods", "yoy_window", "retrain_every"):
        if name in out and out[name] is not None and out[name] < 1:
            raise usage_error(f"'{name}' must be >= 1")
    for name, p in schema.items():
        if p.kind.endswith("_list") and p.default and not out[name]:
            raise usage_error(f"'{name}' is empty")
        if p.kind == "path" and out[name] is not None:
            out[name] = str(Path(out[name]).resolve())
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING, "missing-file", f"config file not found: {path}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise usage_error(f"{path}: invalid TOML: {exc}") from None


# --- helpers ---------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunContext:
    """Collects inputs, artifacts and timings for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.inputs: dict[str, str] = {}
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}

    def input(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        if not p.is_file():
            raise CliError(EXIT_MISSING, "missing-file", f"input file not found: {path}")
        self.inputs[str(p.resolve())] = sha256_file(p)
        return p

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def write_csv(self, frame: pd.DataFrame, name: str) -> None:
        frame.to_csv(self.path(name), index=False, encoding="utf-8", lineterminator="\n")

    def write_json(self, obj, name: str) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")

    def timed(self, label: str):
        ctx = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                ctx.timings[label] = round(time.perf_counter() - self.t0, 6)

        return _Timer()


def penn_config(cfg: dict, static: tuple[bool, ...] = ()) -> PennConfig:
    if cfg["kernel"] not in KERNELS:
        raise usage_error(f"'kernel' must be one of {', '.join(KERNELS)}")
    if cfg["activation"] not in ("sigmoid", "tanh"):
        raise usage_error("'activation' must be sigmoid or tanh")
    try:
        kernel = KernelSpec(variant=cfg["kernel"], delta=cfg["delta"], bandwidth=cfg["bandwidth"])
        return PennConfig(
            lam=cfg["lam"], kernel=kernel, hidden_dims=tuple(cfg["hidden"]),
            activation=cfg["activation"], n_draws=cfg["draws"], static=static,
        )
    except ValueError as exc:
        raise usage_error(str(exc)) from None


def optimizer_config(cfg: dict, seed: int) -> OptimizerConfig:
    try:
        return OptimizerConfig(learning_rate=cfg["learning_rate"], epochs=cfg["epochs"], seed=seed)
    except ValueError as exc:
        raise usage_error(str(exc)) from None


def read_dataset(ctx: RunContext, cfg: dict) -> Dataset:
    path = ctx.input(cfg["data"])
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise usage_error(f"{path}: unreadable CSV: {exc}") from None
    if cfg["target"] not in frame.columns:
        raise usage_error(f"{path}: target column '{cfg['target']}' not found")
    enc = list(cfg["encoder"])
    feats = list(cfg["features"]) or [c for c in frame.columns if c != cfg["target"] and c not in enc]
    missing = [c for c in feats + enc if c not in frame.columns]
    if missing:
        raise usage_error(f"{path}: columns not found: {', '.join(missing)}")
    if not feats:
        raise usage_error("no decoder feature columns")
    numeric = frame[[cfg["target"], *feats, *enc]]
    if not all(pd.api.types.is_numeric_dtype(t) for t in numeric.dtypes):
        raise usage_error(f"{path}: non-numeric values in model columns")
    if numeric.isna().any().any():
        raise usage_error(f"{path}: missing values in model columns")
    return Dataset.from_arrays(
        frame[feats].to_numpy(np.float64),
        frame[cfg["target"]].to_numpy(np.float64),
        frame[enc].to_numpy(np.float64) if enc else None,
        add_intercept=cfg["intercept"],
        feature_names=tuple((["const"] if cfg["intercept"] else []) + feats),
        encoder_names=tuple(enc or feats),
    )


def _progress(epoch, breakdown):
    if epoch % 50 == 0:
        log.info("epoch %d: total %.6g (mse %.6g, kl %.6g)", epoch, breakdown.total, breakdown.mc_mse, breakdown.kl_total)


# --- commands --------------------------------------------------------------


def cmd_simulate(cfg: dict, ctx: RunContext) -> int:
    try:
        grid = simlab.ScenarioGrid(
            n_values=tuple(cfg["n_values"]), rho_values=tuple(cfg["rho_values"]),
            sigma_values=tuple(cfg["sigma_values"]), seeds=tuple(child_seed(cfg["seed"], "sim", s) for s in cfg["seeds"]),
            methods=tuple(cfg["methods"]), design=cfg["design"], default_n=cfg["default_n"],
            default_rho=cfg["default_rho"], default_sigma=cfg["default_sigma"],
        )
        mcfg = simlab.MethodConfig(
            penn=penn_config(cfg), opt=optimizer_config(cfg, cfg["seed"]),
            lime=explain.LimeConfig(sigma_z=cfg["lime_sigma"], n_samples=cfg["lime_samples"]),
            shapley_draws=cfg["shapley_draws"], n_test=cfg["n_test"],
        )
    except ValueError as exc:
        raise usage_error(str(exc)) from None
    with ctx.timed("simulate"):
        table = simlab.run_scenario_grid(grid, mcfg, jobs=cfg["jobs"])
    seed_map = dict(zip(grid.seeds, cfg["seeds"]))
    table["seed"] = table["seed"].map(seed_map)
    ctx.write_csv(table, "results.csv")
    summary = (
        table.groupby(["cell", "n", "rho", "sigma", "method", "metric"], sort=True)["value"]
        .agg(["median", "mean", "count"]).reset_index()
    )
    ctx.write_csv(summary, "summary.csv")
    failures = table.attrs.get("failures", [])
    if failures:
        with open(ctx.path("failures.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(failures) + "\n")
        log.error("%d simulation runs failed; see failures.log", len(failures))
        return EXIT_RUNTIME
    return EXIT_OK


def _static_mask(cfg: dict, data: Dataset) -> tuple[bool, ...]:
    unknown = set(cfg["static"]) - set(data.feature_names)
    if unknown:
        raise usage_error(f"static columns not among decoder features: {', '.join(sorted(unknown))}")
    return tuple(name in cfg["static"] for name in data.feature_names)


def cmd_train(cfg: dict, ctx: RunContext) -> int:
    data = read_dataset(ctx, cfg)
    pcfg = penn_config(cfg, _static_mask(cfg, data))
    ocfg = optimizer_config(cfg, cfg["seed"])
    with ctx.timed("train"):
        model = train(data, pcfg, ocfg, progress=_progress)
    modelio.save_model(model, ctx.path("model.json"))
    ctx.write_csv(pd.DataFrame([b.as_dict() for b in model.loss_trace]).rename_axis("epoch").reset_index(), "loss_trace.csv")
    post = model.posterior_for(data)
    cols = {"row": np.arange(data.n)}
    for k, name in enumerate(data.feature_names):
        cols[f"{name}_mean"] = post.mu_q[:, k]
        cols[f"{name}_sd"] = post.sigma_q[:, k]
    ctx.write_csv(pd.DataFrame(cols), "coefficients.csv")
    return EXIT_OK


def _contrib_frame(phi: np.ndarray, names, se: np.ndarray | None = None) -> pd.DataFrame:
    cols = {"row": np.arange(phi.shape[0])}
    for k, name in enumerate(names):
        cols[f"phi_{name}"] = phi[:, k]
    if se is not None:
        for k, name in enumerate(names):
            cols[f"se_{name}"] = se[:, k]
    return pd.DataFrame(cols)


def cmd_explain(cfg: dict, ctx: RunContext) -> int:
    methods = cfg["methods"]
    bad = set(methods) - {"penn", "lime", "shapley"}
    if bad:
        raise usage_error(f"unknown explain methods: {', '.join(sorted(bad))}")
    if cfg["black_box"] not in ("mlp", "penn"):
        raise usage_error("'black_box' must be mlp or penn")
    needs_model = "penn" in methods or cfg["black_box"] == "penn"
    if needs_model and cfg["model"] is None:
        raise usage_error("method penn and black_box=penn need --model")
    data = read_dataset(ctx, cfg)
    model = None
    if needs_model:
        try:
            model = modelio.load_model(ctx.input(cfg["model"]))
        except modelio.ModelFormatError as exc:
            raise usage_error(str(exc)) from None
        if model.topology.output_dim != data.x.shape[1]:
            raise usage_error("model and data have different numbers of decoder columns")
    if data.intercept or data.z is not None:
        explained_x, names = data.x[:, int(data.intercept):], data.feature_names[int(data.intercept):]
    else:
        explained_x, names = data.x, data.feature_names
    if ("lime" in methods or "shapley" in methods) and data.distinct_encoder_inputs:
        raise usage_error("lime and shapley need shared encoder and decoder inputs")

    if "penn" in methods:
        post = model.posterior_for(data)
        contrib = explain.contributions(post.mu_q, data.x)
        ctx.write_csv(_contrib_frame(contrib.phi, data.feature_names), "contributions_penn.csv")

    if {"lime", "shapley"} & set(methods):
        if cfg["black_box"] == "mlp":
            net = simlab.fit_black_box(
                explained_x, data.y, simlab.MethodConfig(), child_seed(cfg["seed"], "black-box")
            )
            predict_fn = net.predict
        else:
            def predict_fn(xs):
                return model.predict_mean(Dataset.from_arrays(xs, np.zeros(len(xs)), add_intercept=data.intercept))

        if "lime" in methods:
            lcfg = explain.LimeConfig(sigma_z=cfg["lime_sigma"], n_samples=cfg["lime_samples"])
            with ctx.timed("lime"):
                coef, _ = explain.lime_all(predict_fn, explained_x, lcfg, stream(cfg["seed"], "lime"))
            ctx.write_csv(_contrib_frame(explain.contributions(coef, explained_x).phi, names), "contributions_lime.csv")
        if "shapley" in methods:
            with ctx.timed("shapley"):
                phi, se = explain.sampled_shapley_all(
                    predict_fn, explained_x, cfg["shapley_draws"], stream(cfg["seed"], "shapley")
                )
            ctx.write_csv(_contrib_frame(phi, names, se), "contributions_shapley.csv")
    return EXIT_OK


def cmd_cv(cfg: dict, ctx: RunContext) -> int:
    try:
        spec = modelsel.HvBlockSpec(cfg["v"], cfg["h"])
    except ValueError as exc:
        raise usage_error(str(exc)) from None
    data = read_dataset(ctx, cfg)
    pcfg = penn_config(cfg)
    ocfg = optimizer_config(cfg, cfg["seed"])
    try:
        with ctx.timed("cv"):
            res = modelsel.grid_search(
                data, cfg["lambda_grid"], cfg["delta_grid"], spec,
                modelsel.default_train_fn(pcfg, ocfg), jobs=cfg["jobs"],
            )
    except ValueError as exc:
        raise usage_error(str(exc)) from None
    ctx.write_csv(res.table, "cv_grid.csv")
    ctx.write_json(
        {"lambda": res.best_lambda, "delta": res.best_delta, "mean_mse": res.best_mse, "failures": res.failures},
        "cv_best.json",
    )
    return EXIT_OK


def cmd_capm(cfg: dict, ctx: RunContext) -> int:
    returns_path, macro_path = ctx.input(cfg["returns"]), ctx.input(cfg["macro"])
    try:
        returns = capm.ReturnsPanel.read_csv(returns_path)
        macro = capm.MacroPanel.read_csv(macro_path)
    except (ValueError, KeyError) as exc:
        raise usage_error(f"CAPM input: {exc}") from None
    sectors = cfg["sectors"] or returns.sectors
    unknown = set(sectors) - set(returns.sectors)
    if unknown:
        raise usage_error(f"unknown sectors: {', '.join(sorted(unknown))}")
    pcfg = penn_config(cfg, (True, False) if cfg["static_alpha"] else ())
    for sector in sectors:
        try:
            features = capm.build_features(returns, macro, cfg["yoy_window"], sector)
        except capm.CapmDataError as exc:
            raise usage_error(str(exc)) from None
        ocfg = optimizer_config(cfg, child_seed(cfg["seed"], "capm", sector))
        with ctx.timed(f"fit:{sector}"):
            fit = capm.fit_conditional_capm(features, pcfg, ocfg)
        ctx.write_csv(fit.to_frame(), f"capm_{sector}.csv")
        if cfg["realtime_start"] > 0:
            with ctx.timed(f"realtime:{sector}"):
                try:
                    fc = capm.realtime_forecast(features, pcfg, ocfg, cfg["realtime_start"], cfg["retrain_every"])
                except capm.CapmDataError as exc:
                    raise usage_error(str(exc)) from None
            ctx.write_csv(fc, f"forecast_{sector}.csv")
        if cfg["rolling_window"] > 0:
            try:
                roll = capm.rolling_capm_baseline(features, cfg["rolling_window"])
            except ValueError as exc:
                raise usage_error(str(exc)) from None
            ctx.write_csv(roll, f"rolling_{sector}.csv")
    return EXIT_OK


def cmd_capm_fixture(cfg: dict, ctx: RunContext) -> int:
    syn = capm.synthetic_capm_data(
        n_periods=cfg["periods"], seed=cfg["seed"], yoy_window=cfg["yoy_window"], sectors=tuple(cfg["sectors"])
    )
    syn.returns.to_csv(ctx.path("returns.csv"))
    syn.macro.to_csv(ctx.path("macro.csv"))
    syn.truth.to_csv(ctx.path("truth.csv"), index_label="date", date_format="%Y-%m-%d")
    return EXIT_OK


def cmd_gradcheck(cfg: dict, ctx: RunContext) -> int:
    rng = stream(cfg["seed"], "gradcheck")
    n, k = cfg["n"], cfg["k"]
    x = rng.standard_normal((n, k))
    y = rng.standard_normal(n)
    z = rng.standard_normal((n, k))
    try:
        topo = NetworkTopology(k, tuple(cfg["hidden"]), k, activation=cfg["activation"])
        pi = build_kernel_weights(z, KernelSpec.disjoint(cfg["delta"]))
    except ValueError as exc:
        raise usage_error(str(exc)) from None
    weights = init_weights(topo, stream(cfg["seed"], "gradcheck-init"))
    noise = rng.standard_normal((n, cfg["draws"], k))

    def loss_fn(w):
        mu, sigma, tape = forward(w, topo, z)
        b, dmu, dsig = penn_objective(x, y, PosteriorParams(mu, sigma), noise, pi, cfg["lam"])
        return b.total, backward(tape, dmu, dsig)

    with ctx.timed("gradcheck"):
        err = finite_difference_check(loss_fn, weights, step=cfg["step"], topology=topo)
    ok = err < cfg["tolerance"]
    ctx.write_json({"max_relative_error": err, "tolerance": cfg["tolerance"], "passed": ok}, "gradcheck.json")
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {cfg['tolerance']:.0e})")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS: dict[str, tuple[Callable[[dict, RunContext], int], str]] = {
    "simulate": (cmd_simulate, "run the simulation scenario grid"),
    "train": (cmd_train, "train a model on a CSV dataset"),
    "explain": (cmd_explain, "feature contributions by PENN, LIME and sampled Shapley"),
    "cv": (cmd_cv, "hv-block cross-validation over (lambda, delta)"),
    "capm": (cmd_capm, "conditional CAPM fit, real-time forecasts and rolling OLS"),
    "capm-fixture": (cmd_capm_fixture, "write a synthetic two-regime CAPM dataset"),
    "gradcheck": (cmd_gradcheck, "compare analytic and finite-difference gradients"),
}


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="penn", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", default=None, help="output directory (default: penn-<command>)")
        p.add_argument("--config", default=None, help="TOML config file")
        for param in SCHEMAS[name]:
            kw = {"dest": param.name, "default": None}
            if param.kind == "bool":
                p.add_argument(param.flag, action=argparse.BooleanOptionalAction, help=param.help, **kw)
            else:
                default = f" (default: {param.default})" if param.default not in (None, []) else ""
                p.add_argument(param.flag, help=param.help + default, **kw)
    rp = sub.add_parser("replay", help="rerun a command from its manifest.json")
    rp.add_argument("manifest", help="manifest.json written by an earlier run")
    rp.add_argument("--out", default=None, help="output directory (default: the manifest's)")
    return parser


def execute(command: str, cfg: dict, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(out)
    fn = COMMANDS[command][0]
    t0 = time.perf_counter()
    code = fn(cfg, ctx)
    ctx.timings["total"] = round(time.perf_counter() - t0, 6)
    artifacts = {name: sha256_file(out / name) for name in ctx.artifacts}
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "inputs": ctx.inputs,
        "artifacts": artifacts,
        "timings": ctx.timings,
        "exit_code": code,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def replay(manifest_path: str, out: str | None) -> int:
    p = Path(manifest_path)
    if not p.is_file():
        raise CliError(EXIT_MISSING, "missing-file", f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(p.read_text(encoding="utf-8"))
        command, cfg = manifest["command"], manifest["config"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise usage_error(f"{manifest_path}: not a run manifest ({exc})") from None
    if command not in COMMANDS:
        raise usage_error(f"{manifest_path}: unknown command {command!r}")
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).is_file():
            raise CliError(EXIT_MISSING, "missing-file", f"input file not found: {path}")
        if sha256_file(path) != digest:
            raise CliError(EXIT_MISSING, "changed-input", f"input file changed since the recorded run: {path}")
    cfg = resolve(command, {command: cfg}, {})
    return execute(command, cfg, Path(out) if out else p.parent)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        flags = {p.name: getattr(args, p.name) for p in SCHEMAS[args.command]}
        cfg = resolve(args.command, load_config(args.config), flags)
        out = Path(args.out or f"penn-{args.command}")
        return execute(args.command, cfg, out)
    except CliError as exc:
        return _report(exc.code, exc.kind, str(exc))
    except TrainingError as exc:
        return _report(EXIT_NONFINITE, "non-finite-training", str(exc))
    except FileNotFoundError as exc:
        return _report(EXIT_MISSING, "missing-file", str(exc))
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("unhandled error", exc_info=True)
        return _report(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")


def _report(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
