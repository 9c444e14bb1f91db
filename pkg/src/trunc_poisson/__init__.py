"""A posteriori truncation bounds for Poisson's equation on countable Markov chains."""

__version__ = "0.1.0"

from .certificate import LyapunovCertificate, suggest_K, verify_drift  # noqa: E402
from .errors import TruncationTooSmall  # noqa: E402
from .markov_model import (build_jackson, build_slotted_queue, build_two_mm1,  # noqa: E402
                           embed_ctmc)
from .poisson_bounds import g_bounds, h_bounds  # noqa: E402
from .truncation import assemble, make_partition  # noqa: E402

__all__ = [
    "LyapunovCertificate", "TruncationTooSmall", "assemble", "build_jackson", "build_slotted_queue",
    "build_two_mm1", "embed_ctmc", "g_bounds", "h_bounds", "make_partition", "suggest_K", "verify_drift",
]
