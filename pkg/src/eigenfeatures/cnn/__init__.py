"""A small CNN framework covering conv, batch norm, ReLU, max-pool, dropout, FC and softmax."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    BatchNorm,
    Conv,
    Dropout,
    FullyConnected,
    MaxPool,
    NetworkConfig,
    ReLU,
    Softmax,
    TrainConfig,
    build_config,
    desk_config,
    output_size,
    pool_output_size,
    full_config,
)
from .layers import (
    batchnorm_forward,
    conv_forward,
    cross_entropy,
    fc_forward,
    l2_regularized_loss,
    maxpool_forward,
    relu,
    sgd_step,
    softmax,
)
from .network import Network, init_params
from .training import (
    activations_at,
    activations_many,
    predict,
    predict_many,
    prepare_input,
    read_metrics,
    train,
    untrained_checkpoint,
    write_metrics,
)
