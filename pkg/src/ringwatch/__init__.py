"""Reputation-gaming detection for Q&A forums.

The package splits into ingestion (:mod:`ringwatch.corpus`), the
interaction graph (:mod:`ringwatch.graph`), community detection
(:mod:`ringwatch.louvain`), text similarity (:mod:`ringwatch.textsim`),
the detectors themselves (:mod:`ringwatch.detectors`), synthetic data
(:mod:`ringwatch.synth`) and scoring (:mod:`ringwatch.evaluation`).
"""

from .corpus import (
    InteractionRecord,
    ParsedPosts,
    Post,
    SnapshotSet,
    TableBuild,
    build_interaction_table,
    load_snapshots,
    parse_posts,
)
from .detectors import (
    B_D,
    B_U,
    COMMUNITY_PRESETS,
    GC_V1,
    GC_V2,
    GC_V3,
    JUMP,
    JUMP_PRESETS,
    CommunityDetectorConfig,
    SuspicionReport,
    UserDetectorConfig,
    baseline_down,
    baseline_up,
    community_preset,
    detect_community,
    detect_gc_v1,
    detect_gc_v2,
    detect_gc_v3,
    detect_suspicious_users,
    jump_preset,
)
from .errors import (
    ConfigError,
    DomainError,
    ParseError,
    RingwatchError,
    ValidationError,
)
from .graph import InteractionGraph, build_graph, is_isolated
# The louvain() entry point stays module-qualified: re-exporting it here
# would shadow the ringwatch.louvain submodule attribute.
from .louvain import LouvainConfig, Partition, delta_modularity, modularity
from .textsim import TableSimilaritySource, cosine, fit_tfidf, tokenize

__version__ = "0.1.0"

__all__ = [
    "B_D",
    "B_U",
    "COMMUNITY_PRESETS",
    "GC_V1",
    "GC_V2",
    "GC_V3",
    "JUMP",
    "JUMP_PRESETS",
    "CommunityDetectorConfig",
    "ConfigError",
    "DomainError",
    "InteractionGraph",
    "InteractionRecord",
    "LouvainConfig",
    "ParseError",
    "ParsedPosts",
    "Partition",
    "Post",
    "RingwatchError",
    "SnapshotSet",
    "SuspicionReport",
    "TableBuild",
    "TableSimilaritySource",
    "UserDetectorConfig",
    "ValidationError",
    "baseline_down",
    "baseline_up",
    "build_graph",
    "build_interaction_table",
    "community_preset",
    "cosine",
    "delta_modularity",
    "detect_community",
    "detect_gc_v1",
    "detect_gc_v2",
    "detect_gc_v3",
    "detect_suspicious_users",
    "fit_tfidf",
    "is_isolated",
    "jump_preset",
    "load_snapshots",
    "modularity",
    "parse_posts",
    "tokenize",
    "__version__",
]
