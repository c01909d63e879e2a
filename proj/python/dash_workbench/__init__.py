"""Python access to the dataset debugging workbench core."""

import json

from . import _core
from ._core import DashError

__all__ = [
    "DashError",
    "evaluate",
    "generate_dataset",
    "grad_cam",
    "kmeans",
    "mosaic",
    "replay",
    "serve",
    "train",
    "tsne",
]


def generate_dataset(spec, out_dir):
    return json.loads(_core.generate_dataset(json.dumps(spec), str(out_dir)))


def train(data_dir, out, config=None, model=None, parent=None):
    return json.loads(
        _core.train(str(data_dir), str(out), json.dumps(config or {}), json.dumps(model or {}), str(parent or ""))
    )


def evaluate(data_dir, checkpoint, split="test"):
    return json.loads(_core.evaluate(str(data_dir), str(checkpoint), split))


def grad_cam(data_dir, checkpoint, image_id, target=None):
    return json.loads(_core.grad_cam(str(data_dir), str(checkpoint), image_id, target))


def tsne(ids, latents, perplexity=None, iterations=500, seed=0):
    return json.loads(_core.tsne(list(ids), latents, perplexity, iterations, seed))


def kmeans(ids, latents, k, seed=0):
    return json.loads(_core.kmeans(list(ids), latents, k, seed))


def mosaic(counts, min_cell=0.01, gutter=0.005):
    return json.loads(_core.mosaic(counts, min_cell, gutter))


def replay(script, workdir):
    return json.loads(_core.replay(str(script), str(workdir)))


def serve(host="127.0.0.1", port=8080, data_dir=""):
    """Blocks serving the HTTP API."""
    _core.serve(host, port, str(data_dir))
