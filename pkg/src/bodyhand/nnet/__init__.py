from .model import (
    VARIANT_BRANCHES,
    ModelSpec,
    ParamStore,
    TrainingError,
    backward,
    default_adjacency,
    forward,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    single_stream_spec,
    stream_forward,
)
from .ops import (
    ConfigError,
    ShapeError,
    cross_attention_gate,
    graph_conv,
    normalized_adjacency,
    temporal_conv,
)
from .tensor import GradientError, Tensor, einsum
