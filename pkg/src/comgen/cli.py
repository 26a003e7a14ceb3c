"""Command-line driver: one JSON experiment file, five subcommands.

    comgen gen      --config exp.json    dataset archive + split manifest
    comgen train    --config exp.json    checkpoint + loss history
    comgen eval     --config exp.json    train/test loss, disentanglement, R^2
    comgen diagnose --config exp.json    latent groups, drift, Hinton matrix
    comgen all      --config exp.json    the four in order

Flags only pick the subcommand and the config file, and override the seed,
output directory and architecture profile. Exit status is 0 on success, 2
for an invalid configuration and 1 for any failure while running.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .dataio import read_fids, write_fids
from .diagnostics import EXPECTATIONS, drift_score, encode_means, export_group_csv, group_stats
from .errors import ComgenError, ConfigurationError
from .factorspace import SplitCondition, partition, read_split_manifest, resolve_condition, write_split_manifest
from .metrics import (
    DEFAULT_ALPHA,
    DEFAULT_SAMPLE_SIZE,
    build_coefficient_matrix,
    dci_disentanglement,
    lasso_fit,
    munkres_assign,
    r_squared,
    write_hinton_csv,
)
from .nnmodels import ModelConfig, build_model, load_checkpoint, paper_profile, reduced_profile, save_checkpoint
from .synthgen import RenderSpec, generate_full, make_dataset
from .training import ObjectiveConfig, TrainConfig, fit, reconstruction_loss

PROFILES = ("reduced", "paper")
TASKS = ("composition", "supervised")


@dataclass
class ExperimentConfig:
    dataset: str = "simple"
    factors: dict = field(default_factory=dict)
    render: dict = field(default_factory=dict)
    condition: object = "midpos"
    task: str = "composition"
    profile: str = "reduced"
    model: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    diagnose: dict = field(default_factory=dict)
    output: str = "runs/experiment"
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config: top level must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"config: unknown field(s) {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config: file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config: {path} is not valid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class Resolved:
    """Validated building blocks of an experiment."""

    config: ExperimentConfig
    dataset: object
    render: RenderSpec
    condition: SplitCondition
    model: ModelConfig
    objective: ObjectiveConfig
    train: TrainConfig
    alpha: float
    sample_size: int
    out: Path


def _section(name: str):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, kind, exc, tb):
            if exc is not None and isinstance(exc, (ConfigurationError, TypeError, ValueError, KeyError)):
                msg = str(exc).removeprefix(f"{name}: ")
                raise ConfigurationError(f"{name}: {msg}") from None
            return False

    return _Guard()


def _only(section: str, d: dict, allowed) -> dict:
    if not isinstance(d, dict):
        raise ConfigurationError(f"{section}: must be an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigurationError(f"{section}: unknown field(s) {extra}")
    return d


def resolve(cfg: ExperimentConfig) -> Resolved:
    with _section("seed"):
        if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
            raise ConfigurationError("must be a non-negative integer")
    with _section("task"):
        if cfg.task not in TASKS:
            raise ConfigurationError(f"must be one of {TASKS}")
    with _section("profile"):
        if cfg.profile not in PROFILES:
            raise ConfigurationError(f"must be one of {PROFILES}")
    with _section("dataset"):
        if not isinstance(cfg.factors, dict):
            raise ConfigurationError("factors must be an object of cardinalities")
        ds = make_dataset(cfg.dataset, **cfg.factors)
    with _section("condition"):
        if isinstance(cfg.condition, str):
            cond = resolve_condition(cfg.dataset, cfg.condition)
        else:
            cond = SplitCondition.from_dict(_only("condition", cfg.condition, ("name", "atoms")))
        cond.validate(ds.space)
    with _section("objective"):
        family = "supervised" if cfg.task == "supervised" else "wae"
        obj = ObjectiveConfig(**{"family": family, **_only("objective", cfg.objective,
                                                           [f.name for f in fields(ObjectiveConfig)])})
        if (obj.family == "supervised") != (cfg.task == "supervised"):
            raise ConfigurationError(f"family {obj.family} does not match task {cfg.task}")
    with _section("model"):
        m = dict(_only("model", cfg.model, ("architecture", "decoder", "operator", "latent_dim", "mlp_hidden")))
        arch = m.pop("architecture", "sbd")
        builder = reduced_profile if cfg.profile == "reduced" else paper_profile
        channels = cfg.render.get("channels", ds.default_channels) if isinstance(cfg.render, dict) else 1
        model_cfg = builder(arch, n_factors=len(ds.space), channels=channels, seed=cfg.seed,
                            output="sigmoid" if obj.family == "supervised" else obj.output, **m)
    with _section("render"):
        r = _only("render", cfg.render, ("size", "channels", "supersample"))
        size = r.get("size", model_cfg.canvas)
        if size != model_cfg.canvas:
            raise ConfigurationError(f"size {size} does not match the {cfg.profile} profile canvas "
                                     f"{model_cfg.canvas}")
        render = RenderSpec(size, size, r.get("channels", ds.default_channels), r.get("supersample", 4))
    with _section("train"):
        tc = TrainConfig.for_dataset(cfg.dataset, **{"seed": cfg.seed,
                                                     **_only("train", cfg.train, [f.name for f in fields(TrainConfig)])})
        if tc.seed != cfg.seed:
            raise ConfigurationError("seed is set once at the top level")
    with _section("metrics"):
        mt = _only("metrics", cfg.metrics, ("alpha", "sample_size"))
        alpha = float(mt.get("alpha", DEFAULT_ALPHA))
        sample_size = int(mt.get("sample_size", DEFAULT_SAMPLE_SIZE))
        if alpha < 0 or sample_size < 2:
            raise ConfigurationError("alpha must be >= 0 and sample_size >= 2")
    with _section("diagnose"):
        dg = _only("diagnose", cfg.diagnose, ("factor_a", "factor_b", "expectation"))
        for key in ("factor_a", "factor_b"):
            if key in dg:
                ds.space.index_of(dg[key])
        if dg.get("expectation", "least_squares") not in EXPECTATIONS:
            raise ConfigurationError(f"expectation must be one of {sorted(EXPECTATIONS)}")
    return Resolved(cfg, ds, render, cond, model_cfg, obj, tc, alpha, sample_size, Path(cfg.output))


# --- shared helpers ---------------------------------------------------------------

def versions() -> dict:
    return {"comgen": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "torch": torch.__version__}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(res: Resolved, command: str, outputs: list[str]) -> None:
    write_json(res.out / f"run-{command}.json", {
        "command": command, "config_sha256": res.config.digest(), "seed": res.config.seed,
        "versions": versions(), "config": res.config.to_dict(), "outputs": sorted(outputs)})


def _threads() -> None:
    n = os.environ.get("COMGEN_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def load_data(res: Resolved):
    """Images from the run's archive (written on first use) and the split."""
    archive = res.out / "dataset.fids"
    if not archive.exists():
        cmd_gen(res)
    images, space = read_fids(archive)
    if space != res.dataset.space or images.shape[1:] != (res.render.channels, res.render.size, res.render.size):
        raise ConfigurationError(f"render: archive {archive} does not match the configured dataset")
    split = read_split_manifest(res.out / "split.json", space)
    return images, split


def eval_sample(res: Resolved, indices: np.ndarray) -> np.ndarray:
    """Deterministic subset of at most ``sample_size`` indices."""
    if len(indices) <= res.sample_size:
        return np.asarray(indices)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(res.config.seed, spawn_key=(0xD,))))
    return np.sort(rng.choice(indices, size=res.sample_size, replace=False))


def checkpoint_path(res: Resolved, override=None) -> Path:
    return Path(override) if override else res.out / "model"


def _jsonable(a) -> list:
    return [None if not np.isfinite(x) else float(x) for x in np.ravel(a)]


# --- subcommands --------------------------------------------------------------------

def cmd_gen(res: Resolved) -> list[str]:
    res.out.mkdir(parents=True, exist_ok=True)
    images = generate_full(res.dataset, res.render)
    write_fids(images, res.dataset.space, res.out / "dataset.fids")
    split = partition(res.dataset.space, res.condition)
    name = res.condition.name or "inline"
    write_split_manifest(split, res.dataset.name, res.out / "split.json")
    outputs = ["dataset.fids", "split.json"]
    write_manifest(res, "gen", outputs)
    print(f"{res.dataset.name}: {res.dataset.space.total} images, condition {name}: "
          f"{split.train_count} train / {split.test_count} test")
    return outputs


def cmd_train(res: Resolved, log=print) -> list[str]:
    _threads()
    images, split = load_data(res)
    model = build_model(res.model, res.config.task)
    V = res.dataset.space.values_of(res.dataset.space.all_indices())
    ckpt_dir = res.out / "checkpoints" if res.train.checkpoint_every else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    model, history = fit(model, images, res.dataset.space, split, res.objective, res.train,
                         factor_values=V if res.config.task == "supervised" else None,
                         checkpoint_dir=ckpt_dir, log=log)
    save_checkpoint(model, res.out / "model", res.config.task, res.config.seed, len(history.rows),
                    {"config_sha256": res.config.digest()})
    history.write_csv(res.out / "history.csv")
    outputs = ["model.json", "model.bin", "history.csv"]
    write_manifest(res, "train", outputs)
    return outputs


def per_image_loss(model, images: np.ndarray, res: Resolved, batch: int = 256) -> np.ndarray:
    """Reconstruction loss per image through the encoder mean, or squared factor error when supervised."""
    model.eval()
    V = res.dataset.space.values_of(res.dataset.space.all_indices())
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            x = torch.from_numpy(np.ascontiguousarray(images[i:i + batch])).to(dtype)
            if res.config.task == "supervised":
                err = (model(x) - torch.as_tensor(V[i:i + batch], dtype=dtype)).pow(2).sum(1)
            else:
                x_hat = model.reconstruct(x, clamp=True)
                terms = reconstruction_loss(x_hat, x, res.objective.reconstruction, reduce=False)
                err = terms.reshape(len(x), -1).sum(1) * len(x)
            out.append(err.double().numpy())
    return np.concatenate(out)


def cmd_eval(res: Resolved, checkpoint=None) -> list[str]:
    _threads()
    images, split = load_data(res)
    model, _ = load_checkpoint(checkpoint_path(res, checkpoint))
    losses = per_image_loss(model, images, res)
    Z = encode_means(model, images)
    V = res.dataset.space.values_of(res.dataset.space.all_indices())
    sample = eval_sample(res, split.train)
    C = build_coefficient_matrix(Z[sample], V[sample], res.alpha)
    report = dci_disentanglement(C)
    report.write_json(res.out / "dci.json")

    names = list(res.dataset.space.names)
    if res.config.task == "supervised":
        pred = Z
    else:
        pred = np.column_stack([lasso_fit(Z[sample], V[sample, j], res.alpha).predict(Z)
                                for j in range(V.shape[1])])
    r2 = {}
    for tag, idx in (("train", split.train), ("test", split.test)):
        if len(idx) >= 2:
            per, mean = r_squared(pred[idx], V[idx])
            r2[tag] = {"per_factor": dict(zip(names, _jsonable(per))), "mean": mean}
    write_json(res.out / "r2.json", r2)

    table = {"train_loss": float(losses[split.train].mean()),
             "test_loss": float(losses[split.test].mean()) if split.test_count else None,
             "disentanglement": report.D,
             "loss": "factor_mse" if res.config.task == "supervised" else res.objective.reconstruction,
             "train_count": split.train_count, "test_count": split.test_count}
    write_json(res.out / "eval.json", table)
    outputs = ["eval.json", "dci.json", "r2.json"]
    write_manifest(res, "eval", outputs)
    test = "n/a" if table["test_loss"] is None else f"{table['test_loss']:.4f}"
    print(f"train loss {table['train_loss']:.4f}  test loss {test}  disentanglement {report.D:.4f}")
    return outputs


def cmd_diagnose(res: Resolved, checkpoint=None, factor_a=None, factor_b=None) -> list[str]:
    _threads()
    names = res.dataset.space.names
    fa = factor_a or res.config.diagnose.get("factor_a") or names[0]
    fb = factor_b or res.config.diagnose.get("factor_b") or names[1]
    for f in (fa, fb):
        if f not in names:
            raise ConfigurationError(f"diagnose: dataset {res.dataset.name} has no factor {f!r}")
    if fa == fb:
        raise ConfigurationError("diagnose: factor_a and factor_b must differ")
    images, split = load_data(res)
    model, _ = load_checkpoint(checkpoint_path(res, checkpoint))
    Z = encode_means(model, images)
    V = res.dataset.space.values_of(res.dataset.space.all_indices())
    sample = eval_sample(res, split.train)
    C = build_coefficient_matrix(Z[sample], V[sample], res.alpha)
    write_hinton_csv(C, res.out / "hinton.csv", names)
    assignment = munkres_assign(C)
    groups = group_stats(Z, res.dataset.space, split, fa, fb, assignment)
    export_group_csv(groups, res.out / "groups.csv")
    expectation = res.config.diagnose.get("expectation", "least_squares")
    report = drift_score(groups, expectation)
    d = report.to_dict()
    d.update({"factor_a": fa, "factor_b": fb, "expectation": expectation,
              "assignment": {names[j]: int(i) for j, i in sorted(assignment.items())}})
    write_json(res.out / "drift.json", d)
    outputs = ["hinton.csv", "groups.csv", "drift.json"]
    write_manifest(res, "diagnose", outputs)
    print(f"drift on ({fa}, {fb}): {report.drift:.4f} (train baseline {report.train_baseline:.4f})")
    return outputs


def cmd_all(res: Resolved, args) -> list[str]:
    out = cmd_gen(res)
    out += cmd_train(res)
    out += cmd_eval(res)
    out += cmd_diagnose(res, factor_a=args.factor_a, factor_b=args.factor_b)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comgen", description="combinatorial generalisation experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("gen", "render the dataset and write the split"),
                           ("train", "train a model on the training split"),
                           ("eval", "losses, disentanglement and R^2 of a checkpoint"),
                           ("diagnose", "latent group statistics and drift"),
                           ("all", "gen, train, eval and diagnose in one go")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="experiment JSON file")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="override the output directory")
        s.add_argument("--profile", choices=PROFILES, help="architecture scale")
        if name in ("eval", "diagnose"):
            s.add_argument("--checkpoint", help="checkpoint stem (default <out>/model)")
        if name in ("diagnose", "all"):
            s.add_argument("--factor-a", dest="factor_a")
            s.add_argument("--factor-b", dest="factor_b")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output = args.out
        if args.profile is not None:
            cfg.profile = args.profile
        res = resolve(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        res.out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen":
            cmd_gen(res)
        elif args.command == "train":
            cmd_train(res)
        elif args.command == "eval":
            cmd_eval(res, args.checkpoint)
        elif args.command == "diagnose":
            cmd_diagnose(res, args.checkpoint, args.factor_a, args.factor_b)
        else:
            cmd_all(res, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ComgenError, OSError, RuntimeError, ValueError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
