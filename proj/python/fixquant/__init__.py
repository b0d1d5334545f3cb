# Copyright 2026 The fixquant Authors.
# SPDX-License-Identifier: Apache-2.0

"""Python bindings for the fixquant quantization toolkit."""

from ._fixquant import (
    DataError,
    Error,
    GraphModel,
    NumericError,
    QuantEncoding,
    QuantSim,
    RangeKind,
    UsageError,
    encoding_from_range,
    equalize_model,
    fold_batch_norms,
    load_model,
    qdq,
    quantize_value,
    range_encoding,
    toy,
)

__all__ = [
    "DataError",
    "Error",
    "GraphModel",
    "NumericError",
    "QuantEncoding",
    "QuantSim",
    "RangeKind",
    "UsageError",
    "encoding_from_range",
    "equalize_model",
    "fold_batch_norms",
    "load_model",
    "qdq",
    "quantize_value",
    "range_encoding",
    "toy",
]
