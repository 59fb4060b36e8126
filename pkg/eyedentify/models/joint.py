from typing import Optional

import torch
from torch import nn

from eyedentify.models.autograd.layers import Dense
from eyedentify.models.subnet import DenseStage
from eyedentify.pydantic_models.models import JointConfig


class JointHead(nn.Module):
    """
    Common layers on top of the concatenated (slow, fast) subnet embeddings:
    a fully connected stage, the joint embedding stage and a softmax head.
    """

    def __init__(
        self,
        cfg: JointConfig,
        input_size: int,
        class_count: int,
        generator: Optional[torch.Generator] = None,
        device=None,
    ):
        super().__init__()
        self.cfg = cfg
        self.input_size = input_size
        self.hidden = DenseStage(input_size, cfg.fc_size, cfg.bn_momentum, cfg.bn_epsilon, generator, device)
        self.embedding = DenseStage(cfg.fc_size, cfg.embedding_size, cfg.bn_momentum, cfg.bn_epsilon, generator, device)
        self.head = Dense(cfg.embedding_size, class_count, generator=generator, device=device)

    def embed(self, features: torch.Tensor) -> torch.Tensor:
        return self.embedding(self.hidden(features))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(features))
