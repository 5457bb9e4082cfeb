"""tests for the memory ledger"""
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from engine.exceptions import ContractViolation, DataFormatError
from engine.ledger import (
    ALLOC,
    FREE,
    PHASES,
    AllocEvent,
    MemoryLedger,
    MemoryTimeline,
    export_csv,
    ledger_phase,
    peak_activation_bytes,
    peak_live_bytes,
    phase_summaries,
    read_csv,
    record,
    sparkline,
    use_ledger,
)


def random_stream(rng, length):
    """alloc/free events where frees only release live allocations"""
    timeline = MemoryTimeline()
    live = []
    for seq in range(1, length + 1):
        if live and rng.random() < 0.45:
            nbytes, tag = live.pop(rng.integers(len(live)))
            kind = FREE
        else:
            nbytes = int(rng.integers(1, 4096))
            tag = str(rng.choice(["activation:a", "grad:dW", "weight:W"]))
            live.append((nbytes, tag))
            kind = ALLOC
        phase = str(rng.choice(PHASES))
        record(timeline, AllocEvent(seq, kind, nbytes, tag, phase))
    return timeline


def brute_force_peak(timeline, phase=None, prefix=None):
    best = 0
    for end in range(len(timeline.events) + 1):
        total = sum(
            e.signed_bytes for e in timeline.events[:end]
            if (phase is None or e.phase == phase)
            and (prefix is None or e.tag.startswith(prefix))
        )
        best = max(best, total)
    return best


class TimelineTests(SimpleTestCase):
    """test timeline recording and peak queries"""

    def test_alloc_free_alloc_peak(self):
        """test alloc 100, free 100, alloc 50 peaks at 100"""
        timeline = MemoryTimeline()
        record(timeline, AllocEvent(1, ALLOC, 100, "activation:a", "forward"))
        record(timeline, AllocEvent(2, FREE, 100, "activation:a", "forward"))
        record(timeline, AllocEvent(3, ALLOC, 50, "activation:b", "forward"))

        self.assertEqual(peak_live_bytes(timeline), 100)

    def test_empty_timeline_peak_is_zero(self):
        self.assertEqual(peak_live_bytes(MemoryTimeline()), 0)

    def test_sequence_must_increase(self):
        timeline = MemoryTimeline()
        record(timeline, AllocEvent(2, ALLOC, 1, "a", "io"))
        with self.assertRaises(ContractViolation):
            record(timeline, AllocEvent(2, ALLOC, 1, "a", "io"))

    def test_free_below_zero_rejected(self):
        timeline = MemoryTimeline(baseline_bytes=40)
        record(timeline, AllocEvent(1, ALLOC, 10, "activation:a", "forward"))
        with self.assertRaises(ContractViolation):
            record(timeline, AllocEvent(2, FREE, 60, "activation:a", "forward"))
        self.assertEqual(len(timeline.events), 1)
        self.assertEqual(timeline.live_bytes, 50)

    def test_unknown_phase_rejected(self):
        with self.assertRaises(ValueError):
            peak_live_bytes(MemoryTimeline(), phase_filter="sideways")

    def test_phase_and_prefix_filters(self):
        timeline = MemoryTimeline(baseline_bytes=1000)
        record(timeline, AllocEvent(1, ALLOC, 10, "activation:a", "forward"))
        record(timeline, AllocEvent(2, ALLOC, 20, "grad:dW", "backward"))
        record(timeline, AllocEvent(3, ALLOC, 5, "activation:d", "backward"))

        self.assertEqual(peak_live_bytes(timeline), 1035)
        self.assertEqual(
            peak_live_bytes(timeline, phase_filter="backward",
                            include_baseline=False),
            25,
        )
        self.assertEqual(peak_activation_bytes(timeline), 15)

    def test_peak_matches_prefix_sum_oracle(self):
        """test 1000 random streams against a brute-force prefix sum"""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            timeline = random_stream(rng, int(rng.integers(0, 40)))
            self.assertEqual(
                peak_live_bytes(timeline, include_baseline=False),
                brute_force_peak(timeline),
            )
            phase = str(rng.choice(PHASES))
            self.assertEqual(
                peak_live_bytes(timeline, phase_filter=phase,
                                tag_prefix="activation:",
                                include_baseline=False),
                brute_force_peak(timeline, phase, "activation:"),
            )

    def test_since_moves_baseline(self):
        timeline = MemoryTimeline()
        record(timeline, AllocEvent(1, ALLOC, 100, "weight:W1", "io"))
        record(timeline, AllocEvent(2, ALLOC, 30, "activation:a", "forward"))
        tail = timeline.since(1)

        self.assertEqual(tail.baseline_bytes, 100)
        self.assertEqual([e.seq for e in tail.events], [2])
        self.assertEqual(peak_live_bytes(tail), 130)


class LedgerTests(SimpleTestCase):
    """test the shared ledger and phases"""

    def test_phases_are_recorded(self):
        ledger = MemoryLedger()
        with use_ledger(ledger):
            with ledger_phase("forward"):
                ledger.alloc(8, "activation:a")
            with ledger_phase("backward"):
                ledger.free(8, "activation:a")

        self.assertEqual(
            [e.phase for e in ledger.timeline.events], ["forward", "backward"],
        )
        self.assertEqual(ledger.current_phase, "io")

    def test_negative_live_bytes_is_a_contract_violation(self):
        ledger = MemoryLedger()
        with self.assertRaises(ContractViolation):
            ledger.free(8, "activation:a")

    def test_ledger_since_matches_timeline_since(self):
        ledger = MemoryLedger()
        ledger.alloc(100, "weight:W1")
        ledger.alloc(40, "activation:a")
        start = ledger.last_seq
        ledger.free(40, "activation:a")
        ledger.alloc(10, "activation:b")

        fast = ledger.since(start)
        slow = ledger.timeline.since(start)
        self.assertEqual(fast.baseline_bytes, slow.baseline_bytes)
        self.assertEqual(fast.events, slow.events)
        self.assertEqual(ledger.live_bytes_with_prefix("activation:"), 10)

    def test_ledger_phase_without_ledger_is_noop(self):
        with ledger_phase("update") as active:
            self.assertIsNone(active)


class CsvTests(SimpleTestCase):
    """test csv export and parsing"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "memory.csv"

    def test_export_then_read(self):
        ledger = MemoryLedger()
        with ledger.phase("forward"):
            ledger.alloc(64, "activation:a1")
            ledger.alloc(32, "activation:z1")
        with ledger.phase("backward"):
            ledger.free(64, "activation:a1")

        export_csv(ledger.timeline, self.path)
        lines = self.path.read_text().splitlines()
        parsed = read_csv(self.path)

        self.assertEqual(lines[0], "seq,phase,kind,tag,bytes,live_bytes")
        self.assertEqual(lines[1], "1,forward,alloc,activation:a1,64,64")
        self.assertEqual(parsed.events, ledger.timeline.events)
        self.assertEqual(peak_live_bytes(parsed),
                         peak_live_bytes(ledger.timeline))

    def test_read_rejects_bad_header(self):
        self.path.write_text("seq,phase\n")
        with self.assertRaises(DataFormatError):
            read_csv(self.path)

    def test_read_rejects_inconsistent_live_bytes(self):
        self.path.write_text(
            "seq,phase,kind,tag,bytes,live_bytes\n"
            "1,forward,alloc,activation:a,10,10\n"
            "2,forward,alloc,activation:b,10,25\n"
        )
        with self.assertRaises(DataFormatError):
            read_csv(self.path)

    def test_read_rejects_non_integer(self):
        self.path.write_text(
            "seq,phase,kind,tag,bytes,live_bytes\n"
            "1,forward,alloc,activation:a,ten,10\n"
        )
        with self.assertRaises(DataFormatError):
            read_csv(self.path)

    def test_read_rejects_unknown_phase(self):
        self.path.write_text(
            "seq,phase,kind,tag,bytes,live_bytes\n"
            "1,sideways,alloc,activation:a,10,10\n"
        )
        with self.assertRaises(DataFormatError):
            read_csv(self.path)


    def test_read_rejects_negative_live_bytes(self):
        self.path.write_text(
            "seq,phase,kind,tag,bytes,live_bytes\n"
            "1,forward,free,activation:a,100,-100\n"
        )
        with self.assertRaises(DataFormatError):
            read_csv(self.path)

    def test_read_rejects_negative_baseline(self):
        self.path.write_text(
            "seq,phase,kind,tag,bytes,live_bytes\n"
            "1,forward,alloc,activation:a,100,50\n"
        )
        with self.assertRaises(DataFormatError):
            read_csv(self.path)

    def test_baseline_only_travels_with_events(self):
        export_csv(MemoryTimeline(baseline_bytes=512), self.path)
        self.assertEqual(read_csv(self.path).baseline_bytes, 0)

        timeline = MemoryTimeline(baseline_bytes=512)
        record(timeline, AllocEvent(1, ALLOC, 8, "activation:a", "forward"))
        export_csv(timeline, self.path)
        self.assertEqual(read_csv(self.path).baseline_bytes, 512)


class SummaryTests(SimpleTestCase):
    """test per-phase summaries and sparklines"""

    def test_phase_summaries(self):
        timeline = MemoryTimeline()
        record(timeline, AllocEvent(1, ALLOC, 10, "a", "forward"))
        record(timeline, AllocEvent(2, ALLOC, 20, "b", "forward"))
        record(timeline, AllocEvent(3, FREE, 20, "b", "backward"))
        summaries = {s.phase: s for s in phase_summaries(timeline)}

        self.assertEqual(summaries["forward"].peak_live_bytes, 30)
        self.assertEqual(summaries["forward"].mean_live_bytes, 20)
        self.assertEqual(summaries["backward"].peak_live_bytes, 10)

    def test_sparkline(self):
        self.assertEqual(sparkline([0, 7], width=2), "▁█")
        self.assertEqual(sparkline([5, 5, 5], width=10), "▁▁▁")
        self.assertEqual(sparkline([]), "")
