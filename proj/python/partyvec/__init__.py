"""Python access to the partyvec C++ core."""

from ._partyvec import (
    PartyvecError,
    config_hash,
    cosine,
    normalized_entropy,
    ols,
    persona_count,
    render,
    run_all,
    run_stage,
    t_two_sided_p,
    wasserstein,
)

__all__ = [
    "PartyvecError",
    "config_hash",
    "cosine",
    "normalized_entropy",
    "ols",
    "persona_count",
    "render",
    "run_all",
    "run_stage",
    "t_two_sided_p",
    "wasserstein",
]
__version__ = "0.1.0"
