import logging
from typing import Optional, Union

import torch
from torch import nn

from eyedentify.models.autograd.layers import AvgPool1d, BatchNorm, Conv1d, Dense, Flatten, ReLU
from eyedentify.pydantic_models.models import SubnetConfig

logger = logging.getLogger(__name__)


class ConvStage(nn.Module):
    """conv -> batch norm -> relu -> average pooling"""

    def __init__(self, in_channels: int, kernel: int, filters: int, cfg: SubnetConfig, generator, device=None):
        super().__init__()
        self.conv = Conv1d(in_channels, filters, kernel, padding=cfg.padding, generator=generator, device=device)
        self.bn = BatchNorm(filters, momentum=cfg.bn_momentum, eps=cfg.bn_epsilon, device=device)
        self.relu = ReLU()
        self.pool = AvgPool1d(cfg.pool_size, cfg.pool_stride)

    def forward(self, x):
        return self.pool(self.relu(self.bn(self.conv(x))))


class DenseStage(nn.Module):
    def __init__(self, in_features: int, out_features: int, bn_momentum: float, bn_epsilon: float, generator, device=None):
        super().__init__()
        self.dense = Dense(in_features, out_features, generator=generator, device=device)
        self.bn = BatchNorm(out_features, momentum=bn_momentum, eps=bn_epsilon, device=device)
        self.relu = ReLU()

    def forward(self, x):
        return self.relu(self.bn(self.dense(x)))


class Subnet(nn.Module):
    """
    One branch of the network: a stack of convolution stages, two fully
    connected stages, the embedding layer and a softmax head over the training
    identities. The head is only used while training.
    """

    def __init__(
        self,
        cfg: SubnetConfig,
        class_count: int,
        input_length: int = 1000,
        generator: Optional[torch.Generator] = None,
        device=None,
    ):
        super().__init__()
        if class_count < 2:
            raise ValueError(f"a softmax head needs at least 2 classes, got {class_count}")
        self.cfg = cfg
        self.class_count = class_count
        self.input_length = input_length

        stages = []
        channels = cfg.input_channels
        for block in cfg.conv_blocks:
            stages.append(ConvStage(channels, block.kernel, block.filters, cfg, generator, device))
            channels = block.filters
        self.conv = nn.Sequential(*stages)

        self.feature_length = cfg.output_length(input_length)
        if self.feature_length < 1:
            raise ValueError(f"convolution stack reduces a window of {input_length} samples to nothing")
        self.feature_channels = channels
        self.flatten = Flatten()

        fc = []
        width = self.feature_length * channels
        for size in cfg.fc_sizes:
            fc.append(DenseStage(width, size, cfg.bn_momentum, cfg.bn_epsilon, generator, device))
            width = size
        self.fc = nn.Sequential(*fc)
        self.embedding = Dense(width, cfg.embedding_size, generator=generator, device=device)
        self.embedding_relu = ReLU()
        self.head = Dense(cfg.embedding_size, class_count, generator=generator, device=device)

    @property
    def embedding_size(self) -> int:
        return self.cfg.embedding_size

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """[batch, length, channels] -> [batch, feature_length, last_filters]"""
        return self.conv(x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        h = self.fc(self.flatten(self.features(x)))
        return self.embedding_relu(self.embedding(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Logits of the softmax head."""
        return self.head(self.embed(x))


def build_subnet(
    cfg: Union[SubnetConfig, dict],
    class_count: int,
    input_length: int = 1000,
    seed: int = 0,
    generator: Optional[torch.Generator] = None,
    device=None,
) -> Subnet:
    if not isinstance(cfg, SubnetConfig):
        cfg = SubnetConfig.model_validate(cfg)
    generator = generator if generator is not None else torch.Generator().manual_seed(seed)
    net = Subnet(cfg, class_count, input_length=input_length, generator=generator, device=device)
    logger.info(
        f"Built subnet with {len(cfg.conv_blocks)} conv blocks, "
        f"features [{net.feature_length}, {net.feature_channels}], {class_count} classes"
    )
    return net
