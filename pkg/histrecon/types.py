# Copyright (C) 2024- The histrecon Developers

from enum import Enum
from typing import Any, Dict

from typing_extensions import TypeAlias

JsonObj: TypeAlias = Dict[str, Any]

#: Seconds since the epoch, the resolution every grid is kept at.
Second: TypeAlias = int


class Transition(str, Enum):
    """How a history visit occurred, as recorded by the browser."""

    link = "link"
    typed = "typed"
    reload = "reload"
    auto_subframe = "auto_subframe"
    manual_subframe = "manual_subframe"
    form_submit = "form_submit"
    other = "other"

    def __str__(self) -> str:
        return self.value


FRAME_TRANSITIONS = frozenset({Transition.auto_subframe, Transition.manual_subframe})


class EventKind(str, Enum):
    """Ground-truth activity event kinds logged by the monitoring extension."""

    tab_focus = "tab_focus"
    window_focus = "window_focus"
    window_blur = "window_blur"
    navigation = "navigation"
    tab_close = "tab_close"
    window_close = "window_close"
    input = "input"
    idle_start = "idle_start"
    screen_lock = "screen_lock"

    def __str__(self) -> str:
        return self.value


class ProductivityLevel(str, Enum):
    very_productive = "very_productive"
    productive = "productive"
    neutral = "neutral"
    distracting = "distracting"
    very_distracting = "very_distracting"

    def __str__(self) -> str:
        return self.value


#: One-hot order of the productivity block.
PRODUCTIVITY_ORDER = (
    ProductivityLevel.very_productive,
    ProductivityLevel.productive,
    ProductivityLevel.neutral,
    ProductivityLevel.distracting,
    ProductivityLevel.very_distracting,
)


class DomainClass(str, Enum):
    """Candidate classes for the focused-domain classifier.

    Declaration order is the order of commonness used for labelling overlaps and
    for breaking vote ties.
    """

    C = "C"
    N = "N"
    P1 = "P1"
    P2 = "P2"

    def __str__(self) -> str:
        return self.value


DOMAIN_CLASS_ORDER = (DomainClass.C, DomainClass.N, DomainClass.P1, DomainClass.P2)

#: Class labels of the browser-active task, inactive first.
ACTIVE_CLASS_ORDER = ("inactive", "active")


class MetricScope(str, Enum):
    in_session = "in_session"
    all_seconds = "all_seconds"

    def __str__(self) -> str:
        return self.value


class ErrorMode(str, Enum):
    online = "online"
    per_domain = "per_domain"

    def __str__(self) -> str:
        return self.value


class Method(str, Enum):
    """Reconstruction methods offered by the pipeline."""

    forest = "forest"
    heuristic = "heuristic"

    def __str__(self) -> str:
        return self.value
