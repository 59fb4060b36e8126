"""
Three-stage training: the slow and fast subnets are pre-trained on their own
softmax heads, then frozen while the joint layers learn from their cached
embeddings.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
import tqdm
from torch import nn

from eyedentify.errors import FrozenParameterError, NonFiniteGradientError, TrainingDivergedError, UntrainedModelError
from eyedentify.models.autograd.functional import softmax_xent
from eyedentify.models.autograd.optim import Adam
from eyedentify.models.model_manager import STAGES, ModelBundle
from eyedentify.models.subnet import Subnet
from eyedentify.preprocessing.transforms import InputWindow
from eyedentify.pydantic_models.models import TrainingSchedule
from eyedentify.utils.save_results import save_json
from eyedentify.utils.seeding import deterministic_torch, torch_generator
from eyedentify.utils.timer import Timer

logger = logging.getLogger(__name__)

# rng substreams of the training stages (initialization uses 1..3)
_STAGE_KEYS = {"slow": 11, "fast": 12, "joint": 13}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: Optional[float]


@dataclass
class StageLog:
    stage: str
    lr: float
    train_windows: int
    val_windows: int
    epochs: List[EpochRecord] = field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: Optional[int] = None
    best_val_accuracy: Optional[float] = None

    @property
    def final_train_accuracy(self) -> Optional[float]:
        return self.epochs[-1].train_accuracy if self.epochs else None

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(order: torch.Tensor, batch_size: int) -> List[torch.Tensor]:
    chunks = list(torch.split(order, batch_size))
    # a trailing single window cannot be batch-normalized in training mode
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = torch.cat([chunks[-2], chunks.pop()])
    return chunks


@torch.no_grad()
def _accuracy(module: nn.Module, inputs: torch.Tensor, labels: torch.Tensor, batch_size: int) -> float:
    module.eval()
    correct = 0
    for start in range(0, len(inputs), batch_size):
        logits = module(inputs[start:start + batch_size])
        correct += int((logits.argmax(dim=1) == labels[start:start + batch_size]).sum())
    return correct / len(inputs)


def fit_stage(
    stage: str,
    module: nn.Module,
    inputs: torch.Tensor,
    labels: torch.Tensor,
    lr: float,
    schedule: TrainingSchedule,
    generator: torch.Generator,
    progress: bool = True,
) -> StageLog:
    """
    Minimize the cross-entropy of `module` on (inputs, labels) with Adam.

    A `schedule.validation_fraction` share of the windows is held out; training
    stops once held-out accuracy has not improved for `schedule.patience`
    epochs and the best weights are restored.
    """
    n = len(inputs)
    n_val = int(round(schedule.validation_fraction * n))
    perm = torch.randperm(n, generator=generator)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) < 2:
        raise ValueError(f"stage '{stage}' needs at least 2 training windows, got {len(train_idx)}")
    x_train, y_train = inputs[train_idx], labels[train_idx]
    x_val, y_val = inputs[val_idx], labels[val_idx]

    log = StageLog(stage=stage, lr=lr, train_windows=len(train_idx), val_windows=n_val)
    optimizer = Adam(
        module.named_parameters(), lr,
        beta1=schedule.beta1, beta2=schedule.beta2, eps=schedule.eps, amsgrad=schedule.amsgrad,
    )
    logger.info(f"Training stage '{stage}': {len(train_idx)} windows, {n_val} held out, lr={lr}")

    best_state = None
    waited = 0
    bar = tqdm.tqdm(range(1, schedule.max_epochs + 1), desc=f"{stage} stage", unit="epoch", disable=not progress)
    for epoch in bar:
        module.train()
        loss_sum = 0.0
        correct = 0
        for b, idx in enumerate(_batches(torch.randperm(len(train_idx), generator=generator), schedule.batch_size)):
            loss, probs = softmax_xent(module(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(stage, epoch, b, float(loss))
            optimizer.zero_grad()
            loss.backward()
            try:
                optimizer.step()
            except NonFiniteGradientError as e:
                raise TrainingDivergedError(stage, epoch, b, float(loss)) from e
            loss_sum += float(loss) * len(idx)
            correct += int((probs.argmax(dim=1) == y_train[idx]).sum())
        optimizer.zero_grad()

        record = EpochRecord(
            epoch=epoch,
            loss=loss_sum / len(train_idx),
            train_accuracy=correct / len(train_idx),
            val_accuracy=_accuracy(module, x_val, y_val, schedule.batch_size) if n_val else None,
        )
        log.epochs.append(record)
        bar.set_postfix(loss=f"{record.loss:.4f}", acc=f"{record.train_accuracy:.3f}")

        if n_val:
            if log.best_val_accuracy is None or record.val_accuracy > log.best_val_accuracy:
                log.best_val_accuracy = record.val_accuracy
                log.best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in module.state_dict().items()}
                waited = 0
            else:
                waited += 1
                if waited >= schedule.patience:
                    log.stop_reason = "early_stopping"
                    break
        if schedule.target_train_accuracy is not None and record.train_accuracy >= schedule.target_train_accuracy:
            log.stop_reason = "target_train_accuracy"
            break
    bar.close()

    if best_state is not None:
        module.load_state_dict(best_state)
        logger.info(f"Restored stage '{stage}' weights from epoch {log.best_epoch} (held-out accuracy {log.best_val_accuracy:.4f})")
    module.eval()
    if log.epochs:
        last = log.epochs[-1]
        logger.info(
            f"Stage '{stage}' finished after {len(log.epochs)} epoch(s) ({log.stop_reason}): "
            f"loss={last.loss:.4f}, train accuracy={last.train_accuracy:.4f}"
        )
    return log


def _check_classes(labels: torch.Tensor, class_count: int):
    missing = sorted(set(range(class_count)) - set(labels.tolist()))
    if missing:
        raise ValueError(f"classes {missing} have no training windows")


def pretrain_subnet(
    net: Subnet,
    windows: Sequence[InputWindow],
    schedule: TrainingSchedule,
    branch: str,
    class_labels: Sequence[str],
    seed: int = 0,
    progress: bool = True,
) -> StageLog:
    """Train one subnet with its own softmax head on the `branch` view of labeled windows."""
    if branch not in ("slow", "fast"):
        raise ValueError(f"branch must be 'slow' or 'fast', got '{branch}'")
    table = {label: i for i, label in enumerate(class_labels)}
    unknown = sorted({w.label for w in windows} - set(table), key=str)
    if unknown:
        raise ValueError(f"window labels {unknown} are not among the training identities")
    labels = torch.tensor([table[w.label] for w in windows], dtype=torch.long)
    _check_classes(labels, len(class_labels))
    inputs = torch.from_numpy(
        np.stack([w.slow if branch == "slow" else w.fast for w in windows]).astype(np.float32)
    ).to(next(net.parameters()).device)
    return fit_stage(
        branch, net, inputs, labels.to(inputs.device), schedule.subnet_lr, schedule,
        torch_generator(seed, _STAGE_KEYS[branch]), progress,
    )


def train_joint(
    bundle: ModelBundle,
    windows: Sequence[InputWindow],
    schedule: TrainingSchedule,
    seed: int = 0,
    progress: bool = True,
) -> StageLog:
    """
    Train the joint layers on the frozen subnets' embeddings.

    Raises:
        UntrainedModelError: a subnet has not been pre-trained.
        FrozenParameterError: subnet parameters or statistics changed.
    """
    bundle.require("slow", "fast")
    digest = bundle.subnet_digest()
    labels = bundle.label_indices([w.label for w in windows])
    _check_classes(labels, bundle.class_count)
    features = bundle.subnet_embeddings(windows)
    log = fit_stage(
        "joint", bundle.joint, features, labels.to(features.device), schedule.joint_lr, schedule,
        torch_generator(seed, _STAGE_KEYS["joint"]), progress,
    )
    if bundle.subnet_digest() != digest:
        raise FrozenParameterError("subnet parameters changed during joint training")
    bundle.metadata["subnet_digest"] = digest
    return log


def _training_log(bundle: ModelBundle) -> dict:
    return {
        "seed": bundle.seed,
        "class_labels": bundle.class_labels,
        "trained_stages": list(bundle.trained_stages),
        "stages": bundle.metadata.get("stages", {}),
        "subnet_digest": bundle.metadata.get("subnet_digest"),
    }


def _run_stage(bundle: ModelBundle, stage: str, windows: Sequence[InputWindow], schedule: TrainingSchedule, progress: bool):
    if stage == "joint":
        if not {"slow", "fast"} <= set(bundle.trained_stages):
            raise UntrainedModelError("joint training needs both subnets pre-trained (run stages slow and fast first)")
        log = train_joint(bundle, windows, schedule, seed=bundle.seed, progress=progress)
    else:
        log = pretrain_subnet(
            bundle.subnet(stage), windows, schedule, stage, bundle.class_labels, seed=bundle.seed, progress=progress
        )
    bundle.mark_trained(stage)
    bundle.metadata.setdefault("stages", {})[stage] = log.to_dict()


def train_bundle(
    bundle: ModelBundle,
    windows: Sequence[InputWindow],
    schedule: TrainingSchedule,
    stages: Sequence[str] = STAGES,
    progress: bool = True,
    log_path: Optional[str] = None,
    timer: Optional[Timer] = None,
) -> dict:
    """
    Run the requested stages in order and return the training log. With
    `log_path` the log is rewritten after every stage; after a failure it
    holds the completed stages and the error. Stage durations go to `timer`.
    """
    timer = timer if timer is not None else Timer()
    with deterministic_torch():
        for stage in STAGES:
            if stage not in stages:
                continue
            try:
                with timer.stage(f"Stage {stage}"):
                    _run_stage(bundle, stage, windows, schedule, progress)
            except Exception as e:
                if log_path is not None:
                    save_json(log_path, {**_training_log(bundle), "error": f"{type(e).__name__}: {e}"})
                raise
            if log_path is not None:
                save_json(log_path, _training_log(bundle))
    return _training_log(bundle)
