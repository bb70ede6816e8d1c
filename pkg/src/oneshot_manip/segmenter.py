"""Rule-based decomposition of a demonstration into interaction phases.

A prehensile demonstration cycles through pre-contact (open-gripper
approach), grasping (gripper closure until the arm settles) and post-contact
(carry and release). The segmenter turns gripper commands plus joint speeds
into an exact partition of the frame range.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .state import ProprioFrame

DEFAULT_V_ZERO_THRESHOLD = 1e-3


class PhaseKind(enum.Enum):
    PRE_CONTACT = "pre-contact"
    GRASPING = "grasping"
    POST_CONTACT = "post-contact"


CYCLE = (PhaseKind.PRE_CONTACT, PhaseKind.GRASPING, PhaseKind.POST_CONTACT)


class Source(enum.Enum):
    RULE_BASED = "rule-based"
    VLM = "vlm"


class NoGraspDetected(ValueError):
    """The gripper never closes anywhere in the trajectory."""


class EmptyDecomposition(ValueError):
    """A decomposition with no phases cannot be classified."""


@dataclass(frozen=True)
class InteractionPhase:
    """Inclusive timestep range of one primitive."""

    kind: PhaseKind
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"phase start {self.start} exceeds end {self.end}")

    def __contains__(self, timestep: int) -> bool:
        return self.start <= timestep <= self.end

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Decomposition:
    """Ordered, contiguous phases cycling pre-contact, grasping, post-contact."""

    phases: tuple[InteractionPhase, ...]
    source: Source

    def __post_init__(self) -> None:
        phases = tuple(self.phases)
        for i, phase in enumerate(phases):
            if phase.kind is not CYCLE[i % 3]:
                raise ValueError(
                    f"phase {i} is {phase.kind.value}, expected {CYCLE[i % 3].value}")
            if i > 0 and phase.start != phases[i - 1].end + 1:
                raise ValueError(
                    f"phase {i} starts at {phase.start}, expected {phases[i - 1].end + 1}")
        object.__setattr__(self, "phases", phases)

    def __len__(self) -> int:
        return len(self.phases)

    @property
    def is_complete(self) -> bool:
        return len(self.phases) > 0 and len(self.phases) % 3 == 0

    def phase_at(self, timestep: int) -> InteractionPhase:
        for phase in self.phases:
            if timestep in phase:
                return phase
        raise KeyError(f"timestep {timestep} outside decomposition")


class TruncatedCycle(ValueError):
    """The trajectory ends with the gripper still closed.

    Carries the decomposition of everything segmented so far.
    """

    def __init__(self, message: str, partial: Decomposition):
        super().__init__(message)
        self.partial = partial


def segment_rule_based(
    frames: Sequence[ProprioFrame],
    v_zero_threshold: float = DEFAULT_V_ZERO_THRESHOLD,
) -> Decomposition:
    """Partition a trajectory into (pre-contact, grasping, post-contact)+ phases.

    Boundary rules: pre-contact spans the open-gripper run up to the frame
    before the close command; grasping runs from the close command through the
    first later frame where the gripper has been closed for a full frame and
    joint speeds are below `v_zero_threshold` (through the last closed frame if
    they never settle); post-contact covers the rest of the closed run through
    the reopen frame. Trailing open frames after the final release fold into
    the last post-contact phase so the partition is total.

    Raises:
        NoGraspDetected: the gripper never closes.
        TruncatedCycle: the gripper is still closed at the final frame; the
            exception carries the partial decomposition.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    if not frames[0].gripper_open:
        raise ValueError("trajectory must begin with the gripper open")
    ts = [f.timestep for f in frames]
    if any(b != a + 1 for a, b in zip(ts, ts[1:])):
        raise ValueError("timesteps must be consecutive integers")

    open_flags = [f.gripper_open for f in frames]
    speeds = [f.max_joint_speed for f in frames]
    n = len(frames)

    phases: list[InteractionPhase] = []
    cursor = 0
    while cursor < n:
        close = next((i for i in range(cursor, n) if not open_flags[i]), None)
        if close is None:
            if not phases:
                raise NoGraspDetected("gripper never closes")
            last = phases[-1]
            phases[-1] = InteractionPhase(last.kind, last.start, ts[n - 1])
            break
        if close == cursor:
            raise ValueError(f"close command at frame {close} has no preceding open frame")
        phases.append(InteractionPhase(PhaseKind.PRE_CONTACT, ts[cursor], ts[close - 1]))

        reopen = next((i for i in range(close + 1, n) if open_flags[i]), None)
        last_closed = (reopen - 1) if reopen is not None else n - 1
        settle = next(
            (i for i in range(close + 1, last_closed + 1) if speeds[i] < v_zero_threshold),
            last_closed,
        )
        phases.append(InteractionPhase(PhaseKind.GRASPING, ts[close], ts[settle]))

        if reopen is None:
            if settle < n - 1:
                phases.append(InteractionPhase(PhaseKind.POST_CONTACT, ts[settle + 1], ts[n - 1]))
            partial = Decomposition(tuple(phases), Source.RULE_BASED)
            raise TruncatedCycle("gripper still closed at the final frame", partial)
        phases.append(InteractionPhase(PhaseKind.POST_CONTACT, ts[settle + 1], ts[reopen]))
        cursor = reopen + 1

    return Decomposition(tuple(phases), Source.RULE_BASED)


def sample_macro_steps(phase: InteractionPhase, stride: int = 5) -> list[int]:
    """Timesteps start, start+stride, ... within the phase, plus the end frame."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    steps = list(range(phase.start, phase.end + 1, stride))
    if steps[-1] != phase.end:
        steps.append(phase.end)
    return steps


class HorizonKind(enum.Enum):
    SH = "short-horizon"
    LH = "long-horizon"


_LEVEL_PHASE_COUNTS = {6: 1, 9: 2, 12: 3}


@dataclass(frozen=True)
class Horizon:
    kind: HorizonKind
    level: Optional[int] = None
    canonical: bool = field(default=True)


def classify_horizon(decomposition: Decomposition) -> Horizon:
    """Short horizon for up to 3 phases; otherwise a difficulty level 1..3.

    Phase counts 6/9/12 map to levels 1/2/3; any other count above 3 maps to
    the nearest level and is flagged non-canonical.
    """
    count = len(decomposition)
    if count == 0:
        raise EmptyDecomposition("decomposition has no phases")
    if count <= 3:
        return Horizon(HorizonKind.SH)
    if count in _LEVEL_PHASE_COUNTS:
        return Horizon(HorizonKind.LH, _LEVEL_PHASE_COUNTS[count])
    nearest = min(_LEVEL_PHASE_COUNTS.items(), key=lambda kv: (abs(count - kv[0]), kv[1]))
    return Horizon(HorizonKind.LH, nearest[1], canonical=False)
