from eyedentify.models.autograd.functional import (
    avgpool1d,
    batchnorm,
    concat,
    conv1d,
    dense,
    flatten,
    relu,
    softmax_xent,
)
from eyedentify.models.autograd.gradcheck import GradCheckReport, GradCheckResult, grad_check, gradcheck_suite
from eyedentify.models.autograd.layers import AvgPool1d, BatchNorm, Conv1d, Dense, Flatten, ReLU, parameter_count
from eyedentify.models.autograd.optim import Adam, AdamState, adam_step
