"""Fixed-precision block codec with bias predictors and a Monte Carlo harness."""
from .bias import BiasPrediction, predict_total_bias, quantization_density
from .codec import (
    CodecConfig,
    Rounding,
    compress,
    compress_array,
    decode,
    decompress,
    decompress_array,
    encode,
    read_container,
    roundtrip,
    trace_block,
    write_container,
)
from .errors import (
    BetaOutOfAnalysisRange,
    ConfigError,
    ContainerError,
    DegenerateField,
    NonFiniteInput,
    ZeroBlock,
    ZfpBiasError,
)
from .estimator import ZFPCompressor
from .harness import SyntheticBlocks, run_bias_experiment

__all__ = [
    "BetaOutOfAnalysisRange", "BiasPrediction", "CodecConfig", "ConfigError", "ContainerError",
    "DegenerateField", "NonFiniteInput", "Rounding", "SyntheticBlocks", "ZFPCompressor",
    "ZeroBlock", "ZfpBiasError", "compress", "compress_array", "decode", "decompress",
    "decompress_array", "encode", "predict_total_bias", "quantization_density",
    "read_container", "roundtrip", "run_bias_experiment", "trace_block", "write_container",
]
