"""Command-line entry point and plain-text run configuration.

Configs are INI-style ``key = value`` sections. Every key has a default, so
an empty file is a valid (digits, MCLR, full participation) experiment::

    [dataset]
    source = digits            ; digits | synthetic | quadratic | mnist | fmnist | emnist10
    path =                     ; directory with IDX files (image sources)
    subset = 2000              ; stratified cap on training samples (image sources)
    n_devices = 40
    classes_per_device = 2
    alpha_bar = 0.5            ; synthetic generator hyperpriors
    beta_bar = 0.5
    n_features = 60
    n_classes = 10
    min_size = 50
    max_size = 500
    dim = 10                   ; quadratic ensemble dimension
    curvature = 1.0
    center_scale = 1.0

    [model]
    kind = mclr                ; mclr | mlp (ignored for the quadratic source)
    l2 = 1e-4
    hidden = 64,32

    [hyperparams]
    alpha = 0.01               ; device step size
    eta = 0.03                 ; team step size
    beta = 0.3                 ; server step size
    gamma = 3.0                ; team-to-global coupling
    lambda = 0.5               ; device-to-team coupling
    global_rounds = 100
    team_rounds = 10
    device_steps = 20

    [topology]
    teams = 4
    formation = random         ; random | worst | average

    [participation]
    mode = full_full           ; full_full | full_teams_partial_devices
                               ; partial_teams_full_devices | partial_partial
    team_fraction = 1.0
    device_fraction = 1.0

    [run]
    algorithm = permfl         ; permfl | permfl-exact-prox | fedavg
    seed = 1
    out = runs/run
    bound_check = warn         ; enforce | warn | off
    workers = 1
    eval_every = 1
    anchor_team_each_round = true
    fedavg_local_steps = 0     ; 0 means team_rounds * device_steps

Subcommands: ``run``, ``sweep``, ``validate``, ``fetch-data``.
Exit codes: 0 ok, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import gzip
import shutil
import sys
import time
import urllib.request
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .baselines import FedAvgConfig, run_fedavg
from .engine import (
    DeviceState,
    Hyperparams,
    PermflConfig,
    exact_prox_run,
    quadratic_phi_minimizer,
    run_permfl,
)
from .errors import ConfigurationError, NumericError, PermflError
from .metrics import config_hash, write_manifest, write_table
from .models import MclrModel, MclrSpec, MlpModel, MlpSpec, QuadraticModel, QuadraticSpec
from .seeding import rng_for
from .topology import ParticipationPolicy, form_teams_by_label, form_teams_random
from .validate import (
    ConvexityConstants,
    check_nonconvex,
    check_strongly_convex,
    estimate_convexity_constants,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_SOURCES = ("digits", "synthetic", "quadratic", "mnist", "fmnist", "emnist10")
_ALGORITHMS = ("permfl", "permfl-exact-prox", "fedavg")
_SWEEPABLE = (
    "beta", "gamma", "lambda", "eta", "alpha",
    "team_rounds", "device_steps", "team_fraction", "device_fraction",
)


@dataclass
class RunConfig:
    source: str = "digits"
    path: str = ""
    subset: int = 2000
    n_devices: int = 40
    classes_per_device: int = 2
    alpha_bar: float = 0.5
    beta_bar: float = 0.5
    n_features: int = 60
    n_classes: int = 10
    min_size: int = 50
    max_size: int = 500
    dim: int = 10
    curvature: float = 1.0
    center_scale: float = 1.0

    model_kind: str = "mclr"
    l2: float = 1e-4
    hidden: tuple = (64, 32)

    alpha: float = 0.01
    eta: float = 0.03
    beta: float = 0.3
    gamma: float = 3.0
    lam: float = 0.5
    global_rounds: int = 100
    team_rounds: int = 10
    device_steps: int = 20

    teams: int = 4
    formation: str = "random"

    mode: str = "full_full"
    team_fraction: float = 1.0
    device_fraction: float = 1.0

    algorithm: str = "permfl"
    seed: int = 1
    out: str = "runs/run"
    bound_check: str = "warn"
    workers: int = 1
    eval_every: int = 1
    anchor_team_each_round: bool = True
    fedavg_local_steps: int = 0

    def canonical_text(self) -> str:
        """Canonical serialization of the experiment identity. Excludes the
        output location and worker count, which do not affect results."""
        skip = {"out", "workers"}
        pairs = []
        for name in sorted(vars(self)):
            if name in skip:
                continue
            pairs.append(f"{name}={getattr(self, name)}")
        return "\n".join(pairs)

    def hash(self) -> str:
        return config_hash(self.canonical_text())


_SCHEMA = {
    "dataset": {
        "source": ("str", "source"),
        "path": ("str", "path"),
        "subset": ("int", "subset"),
        "n_devices": ("int", "n_devices"),
        "classes_per_device": ("int", "classes_per_device"),
        "alpha_bar": ("float", "alpha_bar"),
        "beta_bar": ("float", "beta_bar"),
        "n_features": ("int", "n_features"),
        "n_classes": ("int", "n_classes"),
        "min_size": ("int", "min_size"),
        "max_size": ("int", "max_size"),
        "dim": ("int", "dim"),
        "curvature": ("float", "curvature"),
        "center_scale": ("float", "center_scale"),
    },
    "model": {
        "kind": ("str", "model_kind"),
        "l2": ("float", "l2"),
        "hidden": ("ints", "hidden"),
    },
    "hyperparams": {
        "alpha": ("float", "alpha"),
        "eta": ("float", "eta"),
        "beta": ("float", "beta"),
        "gamma": ("float", "gamma"),
        "lambda": ("float", "lam"),
        "global_rounds": ("int", "global_rounds"),
        "team_rounds": ("int", "team_rounds"),
        "device_steps": ("int", "device_steps"),
    },
    "topology": {
        "teams": ("int", "teams"),
        "formation": ("str", "formation"),
    },
    "participation": {
        "mode": ("str", "mode"),
        "team_fraction": ("float", "team_fraction"),
        "device_fraction": ("float", "device_fraction"),
    },
    "run": {
        "algorithm": ("str", "algorithm"),
        "seed": ("int", "seed"),
        "out": ("str", "out"),
        "bound_check": ("str", "bound_check"),
        "workers": ("int", "workers"),
        "eval_every": ("int", "eval_every"),
        "anchor_team_each_round": ("bool", "anchor_team_each_round"),
        "fedavg_local_steps": ("int", "fedavg_local_steps"),
    },
}

_POSITIVE_FIELDS = (
    "alpha", "eta", "beta", "gamma", "lam",
    "global_rounds", "team_rounds", "device_steps",
    "teams", "n_devices", "classes_per_device", "eval_every", "workers",
)


def _convert(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "ints":
        return tuple(int(part) for part in raw.replace(",", " ").split())
    return raw.strip()


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises ConfigurationError carrying every problem."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    errors: list[str] = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from exc

    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {section}.{key}")
                continue
            kind, attr = _SCHEMA[section][key]
            try:
                values[attr] = _convert(kind, raw)
            except ValueError:
                errors.append(f"{section}.{key}: cannot parse {raw!r} as {kind}")

    config = RunConfig(**values)

    for name in _POSITIVE_FIELDS:
        if getattr(config, name) <= 0:
            errors.append(f"{name} must be positive (got {getattr(config, name)})")
    for name in ("team_fraction", "device_fraction"):
        v = getattr(config, name)
        if not (0.0 < v <= 1.0):
            errors.append(f"{name} must lie in (0, 1] (got {v})")
    if config.source not in _SOURCES:
        errors.append(f"dataset.source must be one of {_SOURCES} (got {config.source!r})")
    if config.model_kind not in ("mclr", "mlp"):
        errors.append(f"model.kind must be mclr or mlp (got {config.model_kind!r})")
    if config.algorithm not in _ALGORITHMS:
        errors.append(f"run.algorithm must be one of {_ALGORITHMS} (got {config.algorithm!r})")
    if config.bound_check not in ("enforce", "warn", "off"):
        errors.append(f"run.bound_check must be enforce, warn, or off (got {config.bound_check!r})")
    if config.formation not in ("random", "worst", "average"):
        errors.append(f"topology.formation must be random, worst, or average (got {config.formation!r})")
    if config.l2 < 0:
        errors.append(f"l2 must be non-negative (got {config.l2})")

    if errors:
        raise ConfigurationError(
            "invalid configuration:\n  " + "\n  ".join(errors), errors=errors
        )
    return config


def _load_classification(rc: RunConfig):
    if rc.source == "digits":
        dataset = data_mod.load_builtin_digits()
    elif rc.source in ("mnist", "fmnist", "emnist10"):
        if not rc.path:
            raise ConfigurationError(
                f"dataset.path must point to a directory with IDX files for source {rc.source}"
            )
        pair = data_mod.find_idx_pair(rc.path)
        if pair is None:
            raise ConfigurationError(
                f"no train-images-idx3-ubyte / train-labels-idx1-ubyte pair under {rc.path}"
            )
        dataset = data_mod.load_idx_dataset(pair[0], pair[1], n_classes=10, provenance=rc.source)
    else:
        raise ConfigurationError(f"not a classification source: {rc.source}")

    if rc.subset and rc.subset < len(dataset):
        keep = data_mod.stratified_subset(dataset.labels, rc.subset, seed=rc.seed)
        dataset = data_mod.LabeledDataset(
            dataset.features[keep], dataset.labels[keep],
            n_classes=dataset.n_classes, provenance=dataset.provenance,
        )
    partition = data_mod.partition_non_iid(
        dataset.labels, rc.n_devices, rc.classes_per_device, seed=rc.seed
    )
    return dataset, partition


@dataclass
class Experiment:
    """Resolved experiment: engine config plus evaluation/baseline inputs."""

    permfl: PermflConfig
    rc: RunConfig
    data_hash: str
    devices_flat: list
    shared_model: object | None


def build_experiment(rc: RunConfig) -> Experiment:
    policy = ParticipationPolicy(
        mode=rc.mode, team_fraction=rc.team_fraction,
        device_fraction=rc.device_fraction, seed=rc.seed,
    )
    hp = Hyperparams(
        alpha=rc.alpha, eta=rc.eta, beta=rc.beta, gamma=rc.gamma, lam=rc.lam,
        global_rounds=rc.global_rounds, team_rounds=rc.team_rounds,
        device_steps=rc.device_steps,
    )

    if rc.source == "quadratic":
        models = {}
        for did in range(rc.n_devices):
            rng = rng_for(rc.seed, "quadratic-center", did)
            center = rng.normal(scale=rc.center_scale, size=rc.dim)
            models[did] = QuadraticModel(QuadraticSpec(center, rc.curvature))
        topology = form_teams_random(range(rc.n_devices), rc.teams, seed=rc.seed)
        permfl = PermflConfig(
            models=models, topology=topology, hp=hp, x0=np.zeros(rc.dim),
            policy=policy, seed=rc.seed,
            anchor_team_to_global=rc.anchor_team_each_round,
            eval_every=rc.eval_every, workers=rc.workers,
        )
        digest = config_hash("|".join(
            np.array2string(models[d].spec.center, precision=17) for d in sorted(models)
        ))
        flat = [DeviceState(device_id=d, team_id=topology.team_of(d), theta=np.zeros(rc.dim))
                for d in sorted(models)]
        return Experiment(permfl, rc, digest, flat, None)

    if rc.source == "synthetic":
        spec = data_mod.SyntheticSpec(
            alpha_bar=rc.alpha_bar, beta_bar=rc.beta_bar, n_devices=rc.n_devices,
            n_features=rc.n_features, n_classes=rc.n_classes,
            min_size=rc.min_size, max_size=rc.max_size, seed=rc.seed,
        )
        generated = data_mod.gen_synthetic(spec)
        dataset, partition = generated.dataset, generated.partition
    else:
        dataset, partition = _load_classification(rc)

    train_part, val_part = data_mod.split_train_val(partition, dataset.labels, seed=rc.seed)
    train = data_mod.batches_for(dataset, train_part)
    val = data_mod.batches_for(dataset, val_part)

    n_features = dataset.features.shape[1]
    if rc.model_kind == "mclr":
        model = MclrModel(MclrSpec(n_features, dataset.n_classes, l2=rc.l2))
    else:
        model = MlpModel(MlpSpec((n_features, *rc.hidden, dataset.n_classes)))

    if rc.formation == "random":
        topology = form_teams_random(sorted(train), rc.teams, seed=rc.seed)
    else:
        topology = form_teams_by_label(
            partition, dataset.labels, mode=rc.formation, n_teams=rc.teams
        )

    permfl = PermflConfig(
        models=model, topology=topology, hp=hp, x0=np.zeros(model.dim),
        train=train, val=val, policy=policy, seed=rc.seed,
        anchor_team_to_global=rc.anchor_team_each_round,
        eval_every=rc.eval_every, workers=rc.workers,
    )
    flat = [
        DeviceState(device_id=d, team_id=topology.team_of(d),
                    theta=np.zeros(model.dim), train=train[d], val=val[d])
        for d in sorted(train)
    ]
    return Experiment(permfl, rc, dataset.content_hash()[:16], flat, model)


def bound_report_for(exp: Experiment):
    rc = exp.rc
    hp = exp.permfl.hp
    if rc.source == "quadratic":
        curvs = [exp.permfl.model_for(d).spec.curvature for d in exp.permfl.topology.device_ids]
        cc = ConvexityConstants(mu_f=min(curvs), L_f=max(curvs))
        return check_strongly_convex(hp, cc)
    sample = exp.devices_flat[0]
    if rc.model_kind == "mclr":
        cc = estimate_convexity_constants(exp.shared_model, sample.train, seed=rc.seed)
        cc = ConvexityConstants(mu_f=max(cc.mu_f, rc.l2), L_f=cc.L_f, estimated=True)
        return check_strongly_convex(hp, cc)
    cc = estimate_convexity_constants(exp.shared_model, sample.train, seed=rc.seed)
    return check_nonconvex(hp, cc.L_f)


def _write_metrics_outputs(out: Path, records, label: str):
    write_table(
        out / "accuracy.dat",
        ["GR", f"{label}(PM)", f"{label}(GM)", f"{label}(PM,w)"],
        [[r.t, r.pm_acc, r.gm_acc, r.pm_acc_weighted] for r in records],
    )
    write_table(
        out / "loss.dat",
        ["GR", f"{label}(PM)", f"{label}(GM)"],
        [[r.t, r.pm_loss, r.gm_loss] for r in records],
    )


def execute_run(rc: RunConfig, out_dir=None) -> dict:
    """Build, bound-check, run, and write artifacts. Returns summary info."""
    out = Path(out_dir if out_dir is not None else rc.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = build_experiment(rc)

    report = None
    if rc.bound_check != "off":
        report = bound_report_for(exp)
        (out / "bounds.txt").write_text(report.to_text() + "\n\n" + report.to_kv() + "\n")
        if not report.passed:
            if rc.bound_check == "enforce":
                raise ConfigurationError(
                    "hyperparameters violate the certified region:\n" + report.to_text()
                )
            print(report.to_text(), file=sys.stderr)

    started = time.perf_counter()
    result = None
    if rc.algorithm == "fedavg":
        steps = rc.fedavg_local_steps or rc.team_rounds * rc.device_steps
        if exp.shared_model is None:
            raise ConfigurationError("fedavg requires a shared classification model")
        fedavg_cfg = FedAvgConfig(
            rounds=rc.global_rounds, local_steps=steps, step_size=rc.alpha,
            participation_fraction=rc.device_fraction, seed=rc.seed,
            eval_every=rc.eval_every,
        )
        x, records = run_fedavg(fedavg_cfg, exp.devices_flat, exp.shared_model)
        _write_metrics_outputs(out, records, "FedAvg")
        final = records[-1] if records else None
    else:
        runner = exact_prox_run if rc.algorithm == "permfl-exact-prox" else run_permfl
        result = runner(exp.permfl)
        x = result.x
        records = result.metrics
        if records:
            _write_metrics_outputs(out, records, "PerMFL")
        write_table(
            out / "phi_grad.dat", ["GR", "GradSq"],
            [[t, v] for t, v in enumerate(result.phi_grad_sq)],
        )
        if rc.source == "quadratic" and result.x_history is not None:
            x_star = quadratic_phi_minimizer(exp.permfl)
            d0 = result.x_history[0] - x_star
            base = float(d0 @ d0)
            rows = []
            for t, xt in enumerate(result.x_history):
                diff = xt - x_star
                rows.append([t, float(diff @ diff), 2.0 * (1.0 - rc.beta) ** t * base])
            write_table(out / "certificate.dat", ["GR", "DistSq", "Bound"], rows)
        final = records[-1] if records else None

    (out / "topology.txt").write_text(exp.permfl.topology.to_text())
    manifest = {
        "config_hash": rc.hash(),
        "seed": rc.seed,
        "algorithm": rc.algorithm,
        "data_hash": exp.data_hash,
        "devices": len(exp.permfl.topology.device_ids),
        "teams": exp.permfl.topology.n_teams,
        "rounds": rc.global_rounds,
        "package_version": "0.1.0",
    }
    write_manifest(out / "manifest.txt", manifest)
    (out / "timing.txt").write_text(f"elapsed_s={time.perf_counter() - started:.3f}\n")
    summary = {"out": str(out), "config_hash": rc.hash()}
    if final is not None:
        summary.update(pm_acc=final.pm_acc, gm_acc=final.gm_acc,
                       pm_loss=final.pm_loss, gm_loss=final.gm_loss)
    return summary


def execute_repeats(rc: RunConfig, repeats: int, out_dir=None) -> dict:
    """Run ``repeats`` copies with consecutive seeds and summarize the final
    metrics as mean/std (sample std for two or more runs)."""
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    base_out = Path(out_dir if out_dir is not None else rc.out)
    base_out.mkdir(parents=True, exist_ok=True)
    finals = []
    for seed in range(rc.seed, rc.seed + repeats):
        summary = execute_run(replace(rc, seed=seed), out_dir=base_out / f"seed_{seed}")
        finals.append(summary)
    entries = {"repeats": repeats, "first_seed": rc.seed}
    for key in ("pm_acc", "gm_acc", "pm_loss", "gm_loss"):
        values = [s[key] for s in finals if key in s]
        if not values:
            continue
        arr = np.asarray(values)
        entries[f"{key}.mean"] = f"{arr.mean():.6f}"
        entries[f"{key}.std"] = f"{arr.std(ddof=1) if len(arr) > 1 else 0.0:.6f}"
    write_manifest(base_out / "repeat_summary.txt", entries)
    return {"out": str(base_out), "repeats": repeats}


_PARAM_TO_FIELD = {
    "beta": "beta", "gamma": "gamma", "lambda": "lam", "eta": "eta",
    "alpha": "alpha", "team_rounds": "team_rounds", "device_steps": "device_steps",
    "team_fraction": "team_fraction", "device_fraction": "device_fraction",
}


def execute_sweep(rc: RunConfig, parameter: str, values: list[str], out_dir=None) -> dict:
    if parameter not in _SWEEPABLE:
        raise ConfigurationError(
            f"sweep parameter must be one of {_SWEEPABLE} (got {parameter!r})"
        )
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    field_name = _PARAM_TO_FIELD[parameter]
    base_out = Path(out_dir if out_dir is not None else rc.out)
    base_out.mkdir(parents=True, exist_ok=True)

    from .metrics import parse_dat

    per_value = {}
    for raw in values:
        caster = int if field_name in ("team_rounds", "device_steps") else float
        point = replace(rc, **{field_name: caster(raw)})
        point_out = base_out / f"{parameter}_{raw}"
        execute_run(point, out_dir=point_out)
        _, rows = parse_dat(point_out / "loss.dat")
        _, arows = parse_dat(point_out / "accuracy.dat")
        per_value[raw] = (rows, arows)

    first = values[0]
    rounds = [int(r[0]) for r in per_value[first][0]]
    loss_header = ["GR"]
    acc_header = ["GR"]
    loss_rows = [[t] for t in rounds]
    acc_rows = [[t] for t in rounds]
    for raw in values:
        loss_header += [f"p{parameter}_{raw}", f"g{parameter}_{raw}"]
        acc_header += [f"p{parameter}_{raw}", f"g{parameter}_{raw}"]
        rows, arows = per_value[raw]
        if len(rows) != len(rounds):
            raise ConfigurationError("sweep points produced differing round counts")
        for i, row in enumerate(rows):
            loss_rows[i] += [row[1], row[2]]
        for i, row in enumerate(arows):
            acc_rows[i] += [row[1], row[2]]
    write_table(base_out / f"sweep_{parameter}_loss.dat", loss_header, loss_rows)
    write_table(base_out / f"sweep_{parameter}_acc.dat", acc_header, acc_rows)
    return {"out": str(base_out), "points": len(values)}


def fetch_data(urls: list[str], out_dir: str) -> list[str]:
    """Download IDX files (optionally .gz) and decompress alongside."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for url in urls:
        name = url.rstrip("/").rsplit("/", 1)[-1]
        target = out / name
        with urllib.request.urlopen(url) as response, open(target, "wb") as fh:
            shutil.copyfileobj(response, fh)
        written.append(str(target))
        if name.endswith(".gz"):
            plain = out / name[: -len(".gz")]
            with gzip.open(target, "rb") as src, open(plain, "wb") as dst:
                shutil.copyfileobj(src, dst)
            written.append(str(plain))
    return written


def _load_config_file(path: str, overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    rc = parse_config(text)
    if overrides.seed is not None:
        rc = replace(rc, seed=overrides.seed)
    if overrides.out is not None:
        rc = replace(rc, out=overrides.out)
    if getattr(overrides, "workers", None) is not None:
        rc = replace(rc, workers=overrides.workers)
    if getattr(overrides, "enforce_bounds", False):
        rc = replace(rc, bound_check="enforce")
    return rc


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the run config")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out")
        p.add_argument("--workers", type=int, default=None, help="override [run] workers")
        p.add_argument("--enforce-bounds", action="store_true",
                       help="abort when hyperparameters violate the certified region")

    p_run = sub.add_parser("run", help="execute one experiment")
    add_common(p_run)
    p_run.add_argument("--repeats", type=int, default=1,
                       help="run N seeds (seed..seed+N-1) and emit mean/std")

    p_sweep = sub.add_parser("sweep", help="run one experiment per parameter value")
    add_common(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=_SWEEPABLE)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values, e.g. 0.1,0.2,0.3")

    p_val = sub.add_parser("validate", help="parse a config and print the bound report")
    add_common(p_val)

    p_fetch = sub.add_parser("fetch-data", help="download IDX files")
    p_fetch.add_argument("--url", action="append", required=True, dest="urls")
    p_fetch.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            rc = _load_config_file(args.config, args)
            if args.repeats > 1:
                summary = execute_repeats(rc, args.repeats)
            else:
                summary = execute_run(rc)
            print(f"run complete: {summary}")
            return EXIT_OK
        if args.command == "sweep":
            rc = _load_config_file(args.config, args)
            values = [v for v in args.values.split(",") if v]
            summary = execute_sweep(rc, args.param, values)
            print(f"sweep complete: {summary}")
            return EXIT_OK
        if args.command == "validate":
            rc = _load_config_file(args.config, args)
            exp = build_experiment(rc)
            report = bound_report_for(exp)
            print(report.to_text())
            if args.enforce_bounds and not report.passed:
                return EXIT_CONFIG
            return EXIT_OK
        if args.command == "fetch-data":
            written = fetch_data(args.urls, args.out)
            print("\n".join(written))
            return EXIT_OK
        parser.error(f"unknown command {args.command}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PermflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
