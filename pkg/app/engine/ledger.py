"""
Activation-memory ledger.

Every tensor allocation and free is appended to a timeline as an event
with a logical sequence number. Peak and live-byte queries are prefix sums
over that timeline, so results are exact and reproducible.
"""
import csv
import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import structlog

from engine.exceptions import ContractViolation, DataFormatError

log = structlog.get_logger(__name__)

PHASES = (
    "forward",
    "backward",
    "local-forward",
    "local-backward",
    "update",
    "io",
)
ALLOC = "alloc"
FREE = "free"
CSV_HEADER = ["seq", "phase", "kind", "tag", "bytes", "live_bytes"]

ACTIVATION_PREFIX = "activation:"
GRAD_PREFIX = "grad:"
FEEDBACK_PREFIX = "feedback:"


def _check_phase(phase):
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}, expected one of {PHASES}")


@dataclass(frozen=True)
class AllocEvent:
    """one allocation or free"""
    seq: int
    kind: str
    bytes: int
    tag: str
    phase: str

    @property
    def signed_bytes(self):
        return self.bytes if self.kind == ALLOC else -self.bytes


@dataclass
class MemoryTimeline:
    """ordered event log plus the persistent bytes live before it starts"""
    events: List[AllocEvent] = field(default_factory=list)
    baseline_bytes: int = 0
    # (event count, baseline, live bytes) after the last record
    _tail: Optional[tuple] = field(default=None, init=False, repr=False,
                                   compare=False)

    def record(self, event):
        """
        append an event; sequence numbers must strictly increase and live
        bytes, baseline included, may never drop below zero
        """
        if self.events and event.seq <= self.events[-1].seq:
            raise ContractViolation(
                f"event seq {event.seq} does not exceed {self.events[-1].seq}"
            )
        if event.kind not in (ALLOC, FREE):
            raise ContractViolation(f"unknown event kind {event.kind!r}")
        _check_phase(event.phase)
        live = self._tail_live() + event.signed_bytes
        if live < 0:
            raise ContractViolation(
                f"live bytes {live} below zero after seq {event.seq} "
                f"({event.tag})"
            )
        self.events.append(event)
        self._tail = (len(self.events), self.baseline_bytes, live)

    def _tail_live(self):
        tail = self._tail
        if tail is None or tail[:2] != (len(self.events), self.baseline_bytes):
            return self.live_bytes
        return tail[2]

    def live_curve(self):
        """live bytes after each event, baseline included"""
        live = self.baseline_bytes
        curve = []
        for event in self.events:
            live += event.signed_bytes
            curve.append(live)
        return curve

    @property
    def live_bytes(self):
        return self.baseline_bytes + sum(e.signed_bytes for e in self.events)

    def since(self, seq):
        """slice of events with seq > given seq, baseline moved forward"""
        baseline = self.baseline_bytes
        events = []
        for event in self.events:
            if event.seq > seq:
                events.append(event)
            else:
                baseline += event.signed_bytes
        return MemoryTimeline(events=events, baseline_bytes=baseline)

    @property
    def last_seq(self):
        return self.events[-1].seq if self.events else 0


def record(timeline, event):
    timeline.record(event)


def peak_live_bytes(timeline, phase_filter=None, tag_prefix=None,
                    include_baseline=True):
    """
    Maximum over event prefixes of allocated minus freed bytes.

    Only events matching `phase_filter` (a phase name) and `tag_prefix` are
    summed. The baseline is added unless `include_baseline` is false, which
    is how activation-only peaks are taken.
    """
    if phase_filter is not None:
        _check_phase(phase_filter)
    running = 0
    peak = 0
    for event in timeline.events:
        if phase_filter is not None and event.phase != phase_filter:
            continue
        if tag_prefix is not None and not event.tag.startswith(tag_prefix):
            continue
        running += event.signed_bytes
        peak = max(peak, running)
    if include_baseline:
        peak += timeline.baseline_bytes
    return peak


def peak_activation_bytes(timeline):
    return peak_live_bytes(
        timeline, tag_prefix=ACTIVATION_PREFIX, include_baseline=False,
    )


@dataclass(frozen=True)
class PhaseSummary:
    phase: str
    events: int
    peak_live_bytes: int
    mean_live_bytes: float


def phase_summaries(timeline):
    """peak and mean of the live-byte curve over each phase's events"""
    curves = {}
    for event, live in zip(timeline.events, timeline.live_curve()):
        curves.setdefault(event.phase, []).append(live)
    return [
        PhaseSummary(phase, len(curves[phase]), max(curves[phase]),
                     sum(curves[phase]) / len(curves[phase]))
        for phase in PHASES
        if phase in curves
    ]


SPARK_BLOCKS = "▁▂▃▄▅▆▇█"


def sparkline(values, width=60):
    """one-line block chart; each column shows the max of its bucket"""
    values = list(values)
    if not values or width <= 0:
        return ""
    width = min(width, len(values))
    columns = [
        max(values[i * len(values) // width:(i + 1) * len(values) // width])
        for i in range(width)
    ]
    low, high = min(columns), max(columns)
    if high == low:
        return SPARK_BLOCKS[0] * width
    scale = (len(SPARK_BLOCKS) - 1) / (high - low)
    return "".join(SPARK_BLOCKS[round((v - low) * scale)] for v in columns)


def export_csv(timeline, path):
    """
    Write `seq,phase,kind,tag,bytes,live_bytes`, one row per event.

    The baseline is only carried by the first row's live_bytes, so a
    timeline without events writes the header alone and reads back with
    a baseline of 0.
    """
    path = Path(path)
    try:
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for event, live in zip(timeline.events, timeline.live_curve()):
                writer.writerow([
                    event.seq, event.phase, event.kind, event.tag,
                    event.bytes, live,
                ])
    except OSError as exc:
        raise OSError(f"could not write memory timeline to {path}: {exc}") \
            from exc


def read_csv(path):
    """parse an exported timeline, validating every column"""
    path = Path(path)
    with path.open(newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != CSV_HEADER:
        raise DataFormatError(path, "missing or wrong header")

    timeline = MemoryTimeline()
    live = None
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise DataFormatError(path, f"line {line_no}: expected 6 columns")
        seq, phase, kind, tag, nbytes, live_bytes = row
        try:
            event = AllocEvent(
                seq=int(seq), kind=kind, bytes=int(nbytes), tag=tag,
                phase=phase,
            )
            live_bytes = int(live_bytes)
        except ValueError as exc:
            raise DataFormatError(path, f"line {line_no}: {exc}") from exc
        if event.bytes < 0:
            raise DataFormatError(path, f"line {line_no}: negative bytes")
        if live is None:
            timeline.baseline_bytes = live_bytes - event.signed_bytes
            if timeline.baseline_bytes < 0:
                raise DataFormatError(
                    path, f"line {line_no}: implies negative baseline "
                    f"{timeline.baseline_bytes}",
                )
            live = timeline.baseline_bytes
        live += event.signed_bytes
        if live != live_bytes:
            raise DataFormatError(
                path, f"line {line_no}: live_bytes {live_bytes} != {live}"
            )
        if live < 0:
            raise DataFormatError(
                path, f"line {line_no}: live bytes {live} below zero"
            )
        try:
            timeline.record(event)
        except (ContractViolation, ValueError) as exc:
            raise DataFormatError(path, f"line {line_no}: {exc}") from exc
    return timeline


class MemoryLedger:
    """
    Shared recorder that tensors report to.

    Recording is serialized with a lock; the current phase is set by the
    trainers through `phase()`.
    """

    def __init__(self):
        self.timeline = MemoryTimeline()
        self._lock = threading.Lock()
        self._seq = 0
        self._live = 0
        # live bytes after each seq, index 0 is the empty prefix
        self._live_after = [0]
        self._phase = "io"

    @property
    def current_phase(self):
        return self._phase

    @contextmanager
    def phase(self, name):
        _check_phase(name)
        previous = self._phase
        self._phase = name
        try:
            yield self
        finally:
            self._phase = previous

    def _append(self, kind, nbytes, tag):
        with self._lock:
            self._seq += 1
            event = AllocEvent(
                seq=self._seq, kind=kind, bytes=int(nbytes), tag=tag,
                phase=self._phase,
            )
            self.timeline.record(event)
            self._live += event.signed_bytes
            self._live_after.append(self._live)

    def alloc(self, nbytes, tag):
        self._append(ALLOC, nbytes, tag)

    def free(self, nbytes, tag):
        self._append(FREE, nbytes, tag)

    @property
    def last_seq(self):
        return self._seq

    @property
    def live_bytes(self):
        return self._live

    def live_bytes_with_prefix(self, prefix):
        return sum(
            e.signed_bytes for e in self.timeline.events
            if e.tag.startswith(prefix)
        )

    def since(self, seq):
        """events after `seq`; seq numbers are dense so this is a slice"""
        with self._lock:
            return MemoryTimeline(
                events=self.timeline.events[seq:],
                baseline_bytes=self._live_after[seq],
            )


_active: ContextVar[Optional[MemoryLedger]] = ContextVar(
    "active_ledger", default=None,
)


def active_ledger():
    return _active.get()


@contextmanager
def use_ledger(ledger) -> Iterator[Optional[MemoryLedger]]:
    """make `ledger` (or None to disable recording) current for the block"""
    token = _active.set(ledger)
    try:
        yield ledger
    finally:
        _active.reset(token)


@contextmanager
def ledger_phase(name):
    """set the phase on the active ledger, a no-op when none is active"""
    _check_phase(name)
    ledger = _active.get()
    if ledger is None:
        yield None
        return
    with ledger.phase(name):
        yield ledger
