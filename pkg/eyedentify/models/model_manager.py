import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from eyedentify.errors import ShapeError, UntrainedModelError
from eyedentify.models.joint import JointHead
from eyedentify.models.subnet import Subnet, build_subnet
from eyedentify.preprocessing.transforms import InputWindow, ZScoreStats
from eyedentify.pydantic_models.models import JointConfig, RunConfig, SubnetConfig, TransformConfig
from eyedentify.utils.seeding import torch_generator

logger = logging.getLogger(__name__)

BRANCHES = ("joint", "slow", "fast")
STAGES = ("slow", "fast", "joint")
# init substreams per network part
_INIT_KEYS = {"slow": 1, "fast": 2, "joint": 3}


@dataclass
class EmbeddingVector:
    """Concatenated (joint, fast, slow) embedding of one window."""

    values: np.ndarray
    origin: tuple = field(default=("", 0), compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return len(self.values)

    @cached_property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


class ModelBundle(nn.Module):
    """
    Both subnets, the joint layers and everything needed to turn raw
    velocities into network inputs (transform config, z-score statistics,
    class labels).
    """

    def __init__(
        self,
        slow_cfg: SubnetConfig,
        fast_cfg: SubnetConfig,
        joint_cfg: JointConfig,
        transform: TransformConfig,
        class_labels: Sequence[str],
        zscore: Optional[ZScoreStats] = None,
        window_length: int = 1000,
        seed: int = 0,
        device=None,
    ):
        super().__init__()
        self.slow_cfg = slow_cfg
        self.fast_cfg = fast_cfg
        self.joint_cfg = joint_cfg
        self.transform = transform
        self.class_labels = list(class_labels)
        self.zscore = zscore
        self.window_length = window_length
        self.seed = seed
        self.trained_stages: List[str] = []
        self.metadata: dict = {}
        # SHA-256 trailer of the checkpoint this bundle was saved to or loaded from
        self.checkpoint_digest: Optional[str] = None

        classes = len(self.class_labels)
        self.slow = build_subnet(slow_cfg, classes, window_length, generator=torch_generator(seed, _INIT_KEYS["slow"]), device=device)
        self.fast = build_subnet(fast_cfg, classes, window_length, generator=torch_generator(seed, _INIT_KEYS["fast"]), device=device)
        self.joint = JointHead(
            joint_cfg,
            self.slow.embedding_size + self.fast.embedding_size,
            classes,
            generator=torch_generator(seed, _INIT_KEYS["joint"]),
            device=device,
        )

    @classmethod
    def from_run_config(
        cls, cfg: RunConfig, class_labels: Sequence[str], zscore: Optional[ZScoreStats] = None, device=None
    ) -> "ModelBundle":
        return cls(
            cfg.slow,
            cfg.fast,
            cfg.joint,
            cfg.transform,
            class_labels,
            zscore=zscore,
            window_length=cfg.windows.length,
            seed=cfg.seed,
            device=device,
        )

    @property
    def class_count(self) -> int:
        return len(self.class_labels)

    @property
    def embedding_size(self) -> int:
        return self.joint_cfg.embedding_size + self.fast.embedding_size + self.slow.embedding_size

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    def subnet(self, branch: str) -> Subnet:
        if branch not in ("slow", "fast"):
            raise ValueError(f"no subnet named '{branch}'")
        return self.slow if branch == "slow" else self.fast

    def label_indices(self, labels: Sequence[str]) -> torch.Tensor:
        table = {label: i for i, label in enumerate(self.class_labels)}
        unknown = sorted({label for label in labels if label not in table})
        if unknown:
            raise ValueError(f"labels {unknown} are not among the training identities")
        return torch.tensor([table[label] for label in labels], dtype=torch.long)

    def mark_trained(self, stage: str):
        if stage not in self.trained_stages:
            self.trained_stages.append(stage)
            self.trained_stages.sort(key=STAGES.index)

    def require(self, *stages: str):
        missing = [s for s in stages if s not in self.trained_stages]
        if missing:
            raise UntrainedModelError(
                f"model has not been trained for stage(s) {missing} (trained: {self.trained_stages or 'none'})"
            )

    def subnet_digest(self) -> str:
        """SHA-256 over the parameters and batch-norm statistics of both subnets."""
        h = hashlib.sha256()
        state = self.state_dict()
        for name in sorted(k for k in state if k.startswith(("slow.", "fast."))):
            h.update(name.encode("utf-8"))
            h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def window_tensor(self, windows: Sequence[InputWindow], branch: str) -> torch.Tensor:
        """Stack the `branch` view ('slow' or 'fast') of windows into [n, length, 2] float32."""
        arrays = [w.slow if branch == "slow" else w.fast for w in windows]
        for w in arrays:
            if w.shape != (self.window_length, 2):
                raise ShapeError(f"expected windows of shape ({self.window_length}, 2), got {w.shape}")
        stacked = np.stack(arrays).astype(np.float32) if arrays else np.empty((0, self.window_length, 2), np.float32)
        return torch.from_numpy(stacked).to(self.device)

    @torch.no_grad()
    def subnet_embeddings(self, windows: Sequence[InputWindow]) -> torch.Tensor:
        """Concatenated (slow, fast) subnet embeddings in inference mode, one window at a time."""
        self.eval()
        out = []
        for w in windows:
            slow = self.slow.embed(self.window_tensor([w], "slow"))
            fast = self.fast.embed(self.window_tensor([w], "fast"))
            out.append(torch.cat([slow, fast], dim=1))
        if not out:
            return torch.empty(0, self.slow.embedding_size + self.fast.embedding_size, device=self.device)
        return torch.cat(out)

    @torch.no_grad()
    def predict_proba(self, windows: Sequence[InputWindow], branch: str = "joint") -> np.ndarray:
        """
        Softmax outputs [n, classes] of the chosen branch.

        Windows are evaluated one at a time, so a window's output does not
        depend on which other windows are evaluated with it.
        """
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got '{branch}'")
        self.require(*(STAGES if branch == "joint" else (branch,)))
        self.eval()
        rows = []
        for w in windows:
            if branch == "joint":
                logits = self.joint(self.subnet_embeddings([w]))
            else:
                logits = self.subnet(branch)(self.window_tensor([w], branch))
            rows.append(torch.softmax(logits.double(), dim=1)[0].cpu().numpy())
        return np.stack(rows) if rows else np.empty((0, self.class_count))

    @torch.no_grad()
    def embed_windows(self, windows: Sequence[InputWindow]) -> np.ndarray:
        """[n, 384] embeddings in (joint, fast, slow) order."""
        self.require(*STAGES)
        self.eval()
        rows = []
        for w in windows:
            sub = self.subnet_embeddings([w])
            slow, fast = sub[:, :self.slow.embedding_size], sub[:, self.slow.embedding_size:]
            joint = self.joint.embed(sub)
            rows.append(torch.cat([joint, fast, slow], dim=1)[0].double().cpu().numpy())
        return np.stack(rows) if rows else np.empty((0, self.embedding_size))

    def summary(self) -> Dict[str, int]:
        return {
            "slow": sum(p.numel() for p in self.slow.parameters()),
            "fast": sum(p.numel() for p in self.fast.parameters()),
            "joint": sum(p.numel() for p in self.joint.parameters()),
        }


def classify(bundle: ModelBundle, window: InputWindow, branch: str = "joint") -> np.ndarray:
    return bundle.predict_proba([window], branch=branch)[0]


def embed(bundle: ModelBundle, window: InputWindow) -> EmbeddingVector:
    return EmbeddingVector(bundle.embed_windows([window])[0], origin=window.origin)
