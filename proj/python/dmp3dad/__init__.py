"""Few-shot point cloud anomaly detection from multi-view depth renders."""

import json

from ._core import (
    Encoder,
    Error,
    InvalidArgument,
    MissingEmbedding,
    ModelError,
    ParseError,
    anomaly_score,
    auroc,
    load_point_cloud,
    make_shape,
    normalize,
    render_views,
    set_log_level,
    view_grid,
    view_weights,
    write_synthetic_dataset,
)
from ._core import cli as _cli
from ._core import evaluate as _evaluate

__all__ = [
    "Encoder",
    "Error",
    "InvalidArgument",
    "MissingEmbedding",
    "ModelError",
    "ParseError",
    "anomaly_score",
    "auroc",
    "evaluate",
    "load_point_cloud",
    "main",
    "make_shape",
    "normalize",
    "render_views",
    "set_log_level",
    "view_grid",
    "view_weights",
    "write_synthetic_dataset",
]


def evaluate(manifest, backend, **kwargs):
    """Run the evaluation protocol; returns the report summary as a dict."""
    return json.loads(_evaluate(str(manifest), backend, **kwargs))


def main(argv=None):
    import sys

    code, out, err = _cli(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
