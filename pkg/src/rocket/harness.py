"""Training loops for every mode, the no-joint distillation phase and the ablation grid."""

from __future__ import annotations

import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np

from rocket import autodiff as ad
from rocket.checkpoint import load_checkpoint, save_checkpoint
from rocket.config import TrainConfig, TrainMode, config_to_dict
from rocket.data import Batch, Dataset, Splits, batches, generate, load_cifar10, read_csv
from rocket.errors import NonFiniteError, RocketError, SpecError
from rocket.metrics import evaluate_scores
from rocket.model import (
    RocketNet,
    booster_only_forward,
    forward_rocket,
    init_rocket,
    light_only_forward,
    param_nodes,
)
from rocket.objective import (
    HintLossSpec,
    ObjectiveBreakdown,
    combine,
    cross_entropy,
    frozen_targets,
    hint_loss,
    rocket_objective,
)
from rocket.optimizer import lr_at, make_optimizer

log = logging.getLogger(__name__)

LOG_KEYS = (
    "epoch", "lr", "ce_light", "ce_booster", "hint", "kd", "total",
    "err_light_train", "err_light_val", "err_light_test", "err_booster_test",
    "auc", "gauc", "seconds",
)


class TrainingDiverged(RocketError):
    pass


class StepInfo(NamedTuple):
    epoch: int
    step: int
    net: RocketNet  # after the update
    batch: Batch
    grads: dict[str, np.ndarray]
    breakdown: ObjectiveBreakdown
    lr: float


StepCallback = Callable[[StepInfo], None]


@dataclass
class RunRecord:
    config: dict
    rows: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"config": self.config}, sort_keys=True)]
        lines += [json.dumps(row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "RunRecord":
        lines = Path(path).read_text().splitlines()
        return cls(json.loads(lines[0])["config"], [json.loads(x) for x in lines[1:]])


@dataclass
class RunResult:
    record: RunRecord
    net: RocketNet  # final
    best_net: RocketNet  # best light validation error (final when no validation split)
    err_light: Optional[float]  # test error of best_net's light path
    err_booster: Optional[float]  # test error of the booster at its best validation epoch
    teacher: Optional[RocketNet] = None


# ---------------------------------------------------------------------------
# data


def load_data(cfg: TrainConfig) -> Splits:
    d = cfg.data
    if d.task in ("blobs", "spirals", "ctr"):
        return generate(d.synth_spec(), d.seed)
    if d.task == "csv":
        n = cfg.arch.n_classes
        train = read_csv(d.train_file, n, "train")
        val = read_csv(d.val_file, n, "validation") if d.val_file else None
        test = read_csv(d.test_file, n, "test") if d.test_file else None
        return Splits(train, val, test)
    train_files = [p.strip() for p in d.train_file.split(",") if p.strip()]
    return load_cifar10(train_files, d.test_file or None)


def check_paths(cfg: TrainConfig) -> None:
    """Fail before training when a referenced input is missing or an output dir is absent."""
    for f in cfg.data.files() if cfg.data.task in ("csv", "cifar10") else []:
        if not Path(f).is_file():
            raise FileNotFoundError(f"data file not found: {f}")
    if cfg.paths.booster_checkpoint and not Path(cfg.paths.booster_checkpoint).is_file():
        raise FileNotFoundError(f"booster checkpoint not found: {cfg.paths.booster_checkpoint}")
    for out in (cfg.paths.log, cfg.paths.checkpoint, cfg.paths.best_checkpoint):
        if out and not Path(out).resolve().parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {Path(out).parent}")


# ---------------------------------------------------------------------------
# per-mode objectives


def _batch_seed(cfg: TrainConfig, epoch: int) -> list[int]:
    return [cfg.batch_seed, epoch]


def _gradient_block(cfg: TrainConfig) -> bool:
    if cfg.gradient_block is not None:
        return cfg.gradient_block
    return cfg.mode != TrainMode.ROCKET_NO_GB


def _trainable(cfg: TrainConfig, net: RocketNet) -> list[str]:
    if cfg.mode in (TrainMode.BASE, TrainMode.ROCKET_NO_JOINT):
        return net.path_params("light")
    if cfg.mode == TrainMode.BOOSTER_ONLY:
        return net.path_params("booster")
    return list(net.params)


def _objective(cfg: TrainConfig, net: RocketNet, batch: Batch,
               teacher: Optional[RocketNet]) -> tuple[ObjectiveBreakdown, dict[str, ad.Node]]:
    mode = cfg.mode
    y = ad.constant(batch.y, name="y")
    if mode in (TrainMode.BASE, TrainMode.ROCKET_NO_JOINT):
        nodes = param_nodes(net, net.path_params("light"))
        l, p = light_only_forward(net, batch.x, nodes)
        ce = cross_entropy(y, p)
        if mode == TrainMode.BASE:
            return combine(ce_light=ce), nodes
        z_star, q_star = frozen_targets(booster_only_forward(teacher, batch.x)[0].value)
        hint = hint_loss(cfg.hint, l, p, z_star, q_star)
        return combine(ce_light=ce, hint=hint, lam=cfg.hint.lam), nodes
    if mode == TrainMode.BOOSTER_ONLY:
        nodes = param_nodes(net, net.path_params("booster"))
        _, q = booster_only_forward(net, batch.x, nodes)
        return combine(ce_booster=cross_entropy(y, q)), nodes
    out = forward_rocket(net, batch.x)
    kd_teacher = kd_spec = None
    if mode == TrainMode.ROCKET_PLUS_KD:
        kd_teacher = frozen_targets(booster_only_forward(teacher, batch.x)[0].value)
        kd_spec = HintLossSpec(kind="distill", temperature=cfg.kd.temperature, lam=1.0)
    breakdown = rocket_objective(
        out, y, cfg.hint, _gradient_block(cfg), kd_teacher, kd_spec, cfg.kd.weight
    )
    return breakdown, out.params


# ---------------------------------------------------------------------------
# evaluation


def _logits(net: RocketNet, x: np.ndarray, path: str) -> np.ndarray:
    if path == "light":
        return light_only_forward(net, x)[0].value
    return booster_only_forward(net, x)[0].value


def _evaluate(net: RocketNet, ds: Optional[Dataset], path: str):
    if ds is None:
        return None
    return evaluate_scores(_logits(net, ds.features, path), ds.labels, ds.groups)


def _trains_light(mode: TrainMode) -> bool:
    return mode != TrainMode.BOOSTER_ONLY


def _has_booster(mode: TrainMode) -> bool:
    return mode != TrainMode.BASE


# ---------------------------------------------------------------------------
# training


def _init_net(cfg: TrainConfig, teacher: Optional[RocketNet]) -> RocketNet:
    arch = cfg.arch
    if cfg.mode == TrainMode.ROCKET_NO_SHARING:
        arch = type(arch)(**{**arch.to_dict(), "share_trunk": False})
    net = init_rocket(arch, cfg.seed)
    if cfg.mode == TrainMode.ROCKET_NO_JOINT:
        _copy_shared(net, teacher)
    return net


def _copy_shared(net: RocketNet, teacher: RocketNet) -> None:
    bad = []
    for name in net.partition()["S"]:
        src = teacher.params.get(name)
        if src is None or src.shape != net.params[name].shape:
            got = None if src is None else src.shape
            bad.append(f"{name} (light {net.params[name].shape}, checkpoint {got})")
    if bad:
        raise SpecError("booster checkpoint does not match the light arch: " + "; ".join(bad))
    for name in net.partition()["S"]:
        net.params[name] = teacher.params[name].copy()


def _resolve_teacher(cfg: TrainConfig, teacher: Optional[RocketNet]) -> Optional[RocketNet]:
    if not cfg.mode.needs_teacher or teacher is not None:
        return teacher
    if cfg.paths.booster_checkpoint:
        return load_checkpoint(cfg.paths.booster_checkpoint)
    log.info("no booster checkpoint given; pretraining the booster first")
    return pretrain_booster(cfg).best_net


def train(cfg: TrainConfig, teacher: Optional[RocketNet] = None,
          on_step: Optional[StepCallback] = None, splits: Optional[Splits] = None) -> RunResult:
    """Run one training mode end to end.

    ``teacher`` supplies an in-memory pretrained booster for the modes that
    need one; otherwise ``paths.booster_checkpoint`` is loaded, or a booster
    is pretrained in-run.
    """
    cfg.validate()
    check_paths(cfg)
    teacher = _resolve_teacher(cfg, teacher)
    if teacher is not None:
        teacher = teacher.copy()
    splits = splits or load_data(cfg)
    net = _init_net(cfg, teacher)
    if splits.train.dim != cfg.arch.input_dim:
        raise SpecError(f"data has {splits.train.dim} features, arch expects {cfg.arch.input_dim}")
    trainable = _trainable(cfg, net)
    opt = make_optimizer(cfg.optimizer.kind, cfg.optimizer.momentum, cfg.optimizer.weight_decay,
                         cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps)
    record = RunRecord(config_to_dict(cfg))
    mode = cfg.mode

    best_light = (np.inf, net.copy())
    best_booster_val = np.inf
    err_booster = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(cfg.schedule, epoch)
        sums: dict[str, float] = {}
        seen = 0
        for step, batch in enumerate(batches(splits.train, cfg.batch_size, _batch_seed(cfg, epoch))):
            try:
                # overflow is caught by the tape's finiteness checks; numpy need not warn too
                with np.errstate(over="ignore", invalid="ignore"):
                    breakdown, nodes = _objective(cfg, net, batch, teacher)
                    ad.backward(breakdown.total)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {step}: {exc}") from exc
            vals = breakdown.values()
            for k, v in vals.items():
                if not np.isfinite(v):
                    raise TrainingDiverged(f"epoch {epoch}, step {step}: {k} is non-finite")
                sums[k] = sums.get(k, 0.0) + v * len(batch.labels)
            seen += len(batch.labels)
            grads = {n: ad.grad_or_zeros(nodes[n]) for n in trainable}
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(net.params, grads, lr)
            if on_step is not None:
                on_step(StepInfo(epoch, step, net, batch, grads, breakdown, lr))

        row: dict = {"epoch": epoch, "lr": lr}
        row.update({k: sums[k] / seen for k in ("ce_light", "ce_booster", "hint", "kd", "total") if k in sums})
        if _trains_light(mode):
            tr, va, te = (_evaluate(net, ds, "light") for ds in splits)
            row["err_light_train"] = tr.error_rate
            if va is not None:
                row["err_light_val"] = va.error_rate
            if te is not None:
                row["err_light_test"] = te.error_rate
                if te.auc is not None:
                    row["auc"] = te.auc
                if te.gauc is not None:
                    row["gauc"] = te.gauc
            score = va.error_rate if va is not None else -epoch
            if score <= best_light[0] or va is None:
                best_light = (score, net.copy())
        booster_net = teacher if mode == TrainMode.ROCKET_NO_JOINT else net
        if _has_booster(mode):
            bva = _evaluate(booster_net, splits.validation, "booster")
            bte = _evaluate(booster_net, splits.test, "booster")
            if bte is not None:
                row["err_booster_test"] = bte.error_rate
                if mode == TrainMode.BOOSTER_ONLY:
                    if bte.auc is not None:
                        row["auc"] = bte.auc
                    if bte.gauc is not None:
                        row["gauc"] = bte.gauc
            bscore = bva.error_rate if bva is not None else -epoch
            if bscore <= best_booster_val or bva is None:
                best_booster_val = bscore
                err_booster = None if bte is None else bte.error_rate
            if mode == TrainMode.BOOSTER_ONLY:
                if bscore <= best_light[0] or bva is None:
                    best_light = (bscore, net.copy())
        if cfg.wall_clock:
            row["seconds"] = time.perf_counter() - t0
        record.rows.append({k: row[k] for k in LOG_KEYS if k in row})
        log.debug("epoch %d %s", epoch, row)

    best_net = best_light[1]
    err_light = None
    if _trains_light(mode) and splits.test is not None:
        err_light = _evaluate(best_net, splits.test, "light").error_rate
    result = RunResult(record, net, best_net, err_light, err_booster, teacher)
    _write_outputs(cfg, result)
    return result


def _write_outputs(cfg: TrainConfig, result: RunResult) -> None:
    if cfg.paths.log:
        result.record.write(cfg.paths.log)
    if cfg.paths.checkpoint:
        save_checkpoint(result.net, cfg.paths.checkpoint)
    if cfg.paths.best_checkpoint:
        save_checkpoint(result.best_net, cfg.paths.best_checkpoint)


def pretrain_booster(cfg: TrainConfig, splits: Optional[Splits] = None) -> RunResult:
    """Trunk + booster head on H(y, q) alone; same code path as mode booster_only."""
    return train(_pretrain_config(cfg), splits=splits)


def _pretrain_config(cfg: TrainConfig) -> TrainConfig:
    paths = type(cfg.paths)(booster_checkpoint="")
    return cfg.replace(mode=TrainMode.BOOSTER_ONLY, paths=paths)


def distill_phase(light_cfg: TrainConfig, booster, on_step: Optional[StepCallback] = None,
                  splits: Optional[Splits] = None) -> RunResult:
    """Warm-start the light net from a frozen booster's trunk and fit its logits.

    ``booster`` is a RocketNet or a checkpoint path.
    """
    teacher = booster if isinstance(booster, RocketNet) else load_checkpoint(booster)
    return train(light_cfg.replace(mode=TrainMode.ROCKET_NO_JOINT), teacher=teacher,
                 on_step=on_step, splits=splits)


# ---------------------------------------------------------------------------
# ablation grid


@dataclass
class GridRow:
    mode: str
    seeds: list[int]
    errs_light: list[Optional[float]]
    errs_booster: list[Optional[float]]

    @staticmethod
    def _median(vals) -> Optional[float]:
        vals = [v for v in vals if v is not None]
        return statistics.median(vals) if vals else None

    @property
    def median_err_light(self) -> Optional[float]:
        return self._median(self.errs_light)

    @property
    def median_err_booster(self) -> Optional[float]:
        return self._median(self.errs_booster)


@dataclass
class GridResult:
    rows: list[GridRow]
    records: dict[tuple[str, int], RunRecord]
    notes: list[str] = field(default_factory=list)
    failure: Optional[str] = None

    def row(self, mode: str) -> GridRow:
        return next(r for r in self.rows if r.mode == mode)

    def to_csv(self) -> str:
        lines = ["mode,seeds,median_err_light,median_err_booster"]
        for r in self.rows:
            fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
            seeds = " ".join(str(s) for s in r.seeds)
            lines.append(f"{r.mode},{seeds},{fmt(r.median_err_light)},{fmt(r.median_err_booster)}")
        if self.failure:
            lines.append(f"# FAILED: {self.failure}")
        return "\n".join(lines) + "\n"


def _seed_runs(base: TrainConfig, modes: list[str], seed: int) -> dict[str, tuple]:
    """All requested modes for one seed; the pretrained booster is shared."""
    cfg = base.replace(seed=seed, shuffle_seed=None, paths=type(base.paths)(
        booster_checkpoint=base.paths.booster_checkpoint))
    splits = load_data(cfg)
    out: dict[str, tuple] = {}
    teacher = pre = None
    needs_teacher = any(TrainMode(m).needs_teacher for m in modes)
    pretrain_here = needs_teacher and not cfg.paths.booster_checkpoint
    if pretrain_here or TrainMode.BOOSTER_ONLY.value in modes:
        pre = train(_pretrain_config(cfg), splits=splits)
    if pretrain_here:
        teacher = pre.best_net
    for m in modes:
        if m == TrainMode.BOOSTER_ONLY.value:
            res = pre
        else:
            res = train(cfg.replace(mode=TrainMode(m)), teacher=teacher, splits=splits)
        out[m] = (res.err_light, res.err_booster, res.record)
    return out


def run_ablation_grid(base: TrainConfig, modes: list[str], k: int = 5,
                      workers: int = 1, csv_path=None) -> GridResult:
    """Every mode over seeds base.seed .. base.seed + k - 1, median test errors per mode."""
    if not modes:
        raise SpecError("ablation grid needs at least one mode")
    modes = [TrainMode(m).value for m in modes]
    seeds = [base.seed + i for i in range(k)]
    notes = []
    if any(TrainMode(m).needs_teacher for m in modes) and not base.paths.booster_checkpoint:
        notes.append("no booster checkpoint given: pretraining a booster per seed first")
    per_seed: dict[int, dict] = {}
    failure = None
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {s: pool.submit(_seed_runs, base, modes, s) for s in seeds}
                for s in seeds:
                    per_seed[s] = futures[s].result()
        else:
            for s in seeds:
                per_seed[s] = _seed_runs(base, modes, s)
    except Exception as exc:  # flush what finished, then re-raise below
        failure = f"{type(exc).__name__}: {exc}"
    done = [s for s in seeds if s in per_seed]
    rows = [
        GridRow(m, done, [per_seed[s][m][0] for s in done], [per_seed[s][m][1] for s in done])
        for m in modes
    ]
    records = {(m, s): per_seed[s][m][2] for s in done for m in modes}
    result = GridResult(rows, records, notes, failure)
    if csv_path:
        Path(csv_path).write_text(result.to_csv())
    if failure:
        raise RocketError(f"ablation grid aborted after seeds {done}: {failure}")
    return result
