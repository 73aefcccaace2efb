"""key = value config files with CASEBOOK_-prefixed environment overrides.

Recognized keys (all optional): dimension, seed, embedder (hashing|remote),
embed_endpoint, generate_endpoint, index_kind, metric, hnsw_m,
hnsw_ef_construction, hnsw_ef_search, ivf_nlist, ivf_nprobe,
ivf_kmeans_iters, budget_tokens, feedback_beta.
"""

from __future__ import annotations

import os
from pathlib import Path

ENV_PREFIX = "CASEBOOK_"

_INT_KEYS = {
    "dimension",
    "seed",
    "hnsw_m",
    "hnsw_ef_construction",
    "hnsw_ef_search",
    "ivf_nlist",
    "ivf_nprobe",
    "ivf_kmeans_iters",
    "budget_tokens",
}
_FLOAT_KEYS = {"feedback_beta"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def load_config(path: str | Path | None = None, environ: dict | None = None) -> dict:
    """Parse a key = value file (# comments allowed), then apply environment
    overrides named CASEBOOK_<KEY>."""
    env = os.environ if environ is None else environ
    out: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            key = key.strip().lower()
            out[key] = _coerce(key, value.strip())
    for env_key, value in env.items():
        if env_key.startswith(ENV_PREFIX):
            key = env_key[len(ENV_PREFIX) :].lower()
            out[key] = _coerce(key, value)
    return out
