"""sparsekern: sparse 3D convolution with spatial-wise partition large kernels."""

from .bench import (
    BenchConfig,
    BenchRow,
    bench_run,
    mac_count,
    param_count,
    rows_to_csv,
)
from .conv import (
    LayerGrads,
    PlainConvLayer,
    SwpConvLayer,
    conv_backward_plain,
    conv_forward_plain,
    init_plain_layer,
    init_swp_layer,
    read_spwt,
    swp_backward,
    swp_forward_shrunk,
    swp_forward_train,
    write_spwt,
)
from .core import (
    SceneSpec,
    SparseTensor,
    build_index,
    deserialize,
    random_scene,
    read_spvx,
    serialize,
    voxelize,
    write_spvx,
)
from .errors import (
    ChannelChainError,
    DuplicateCoord,
    EmptyScene,
    FormatError,
    InfeasibleScene,
    InvalidKernelSize,
    InvalidStride,
    LabelError,
    PartitionMismatch,
    ShapeError,
    SparsekernError,
    TargetNotFound,
)
from .kernelmap import (
    GroupMap,
    GroupedKernelMap,
    KernelMap,
    OffsetPattern,
    build_kernel_map_regular,
    build_kernel_map_submanifold,
    enumerate_dilated,
    enumerate_offsets,
    group_kernel_map,
    partition_offsets,
)
from .net import (
    Block,
    ErfResult,
    Net,
    build_kmaps,
    erf_compute,
    make_desk_net,
    net_forward,
    train_step,
    write_erf_csv,
    write_erf_pgm,
)
from .rng import SplitMix64

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "BenchRow",
    "Block",
    "ChannelChainError",
    "DuplicateCoord",
    "EmptyScene",
    "ErfResult",
    "FormatError",
    "GroupMap",
    "GroupedKernelMap",
    "InfeasibleScene",
    "InvalidKernelSize",
    "InvalidStride",
    "KernelMap",
    "LabelError",
    "LayerGrads",
    "Net",
    "OffsetPattern",
    "PartitionMismatch",
    "PlainConvLayer",
    "SceneSpec",
    "ShapeError",
    "SparseTensor",
    "SparsekernError",
    "SplitMix64",
    "SwpConvLayer",
    "TargetNotFound",
    "bench_run",
    "build_index",
    "build_kernel_map_regular",
    "build_kernel_map_submanifold",
    "build_kmaps",
    "conv_backward_plain",
    "conv_forward_plain",
    "deserialize",
    "enumerate_dilated",
    "enumerate_offsets",
    "erf_compute",
    "group_kernel_map",
    "init_plain_layer",
    "init_swp_layer",
    "mac_count",
    "make_desk_net",
    "net_forward",
    "param_count",
    "partition_offsets",
    "random_scene",
    "read_spvx",
    "read_spwt",
    "rows_to_csv",
    "serialize",
    "swp_backward",
    "swp_forward_shrunk",
    "swp_forward_train",
    "train_step",
    "voxelize",
    "write_erf_csv",
    "write_erf_pgm",
    "write_spvx",
    "write_spwt",
]
