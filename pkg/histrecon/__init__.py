# Copyright (C) 2024- The histrecon Developers

from .activity import (  # noqa: F401
    ActivityEvent,
    ActivitySpan,
    SecondGrid,
    Session,
    active_seconds,
    build_spans,
    sessions,
)
from .evaluation import Evaluation  # noqa: F401
from .forest import Forest, ForestParams, fit  # noqa: F401
from .history import (  # noqa: F401
    DomainVocabulary,
    HistoryVisit,
    ProductivityMap,
    compute_top_domains,
    extract_domain,
    filter_frame_navigations,
    load_productivity_map,
    parse_history,
)
from .pipeline import Config, Model, Pipeline  # noqa: F401
from .simulator import UserProfile, generate_corpus, generate_user  # noqa: F401
from .types import DomainClass, EventKind, Method, ProductivityLevel, Transition  # noqa: F401

__version__ = "0.1.0"
