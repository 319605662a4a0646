"""Three-stage pipeline: frame gating, memory formation, contextual
summarization.

Two execution modes share the same stage logic:

* simulated clock -- a single-threaded interpreter that replays frame and
  query events in timestamp order with a deterministic cost model, so the
  same (trace, seeds, config) always yields a byte-identical report;
* wall clock -- three real threads over bounded queues with snapshot
  isolation, used by the interactive mode and the concurrency stress tests.

Formation work and generation share one simulated compute resource in
simulated mode: a query's generation starts no earlier than the resource is
free, which is what makes request processing delay sensitive to clustering
load.  Queries never wait for formation to *read*: they always see the
latest published snapshot.
"""

from __future__ import annotations

import dataclasses
import json
import queue
import threading
import time
from dataclasses import dataclass, field

from .errors import BackendError, InputError
from .frame_gate import Frame, FrameGate, GateConfig, VisionBuffer
from .memory_core import MemoryConfig, MemoryStore
from .ports import PortSet
from .retrieval import assemble_context, bundle_digest, encode_query


class SimulatedClock:
    """Advances only via explicit set/advance calls."""

    mode = "sim"

    def __init__(self, start: float = 0.0):
        self._now = start

    @property
    def now(self) -> float:
        return self._now

    def set(self, t: float) -> None:
        if t < self._now:
            raise InputError(f"simulated clock cannot go backwards ({t} < {self._now})")
        self._now = t

    def advance(self, dt: float) -> None:
        self.set(self._now + dt)


class WallClock:
    mode = "wall"

    def __init__(self):
        self._origin = time.monotonic()

    @property
    def now(self) -> float:
        return time.monotonic() - self._origin


@dataclass(frozen=True)
class QueryRequest:
    question: str
    t_input: float


@dataclass(frozen=True)
class CostModel:
    """Simulated per-operation costs (seconds) for the deterministic clock."""

    frame_encode: float = 0.0005
    cluster_per_row: float = 0.002  # per token row fed to chunk clustering
    assemble_base: float = 0.005
    assemble_per_row: float = 1e-5  # per retrieved token row
    generate: float = 0.02


@dataclass
class AnswerRecord:
    question: str
    answer: str
    t_input: float
    t_start: float
    t_done: float
    rpd: float
    bundle_digest: str
    error: str | None = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunReport:
    frames_in: int
    frames_kept: int
    duration: float  # stream time span (sim) or wall elapsed (wall)
    fps_in: float  # input frames per second, dropped frames included
    fps_kept: float
    answers: list[AnswerRecord]
    config: dict
    clock_mode: str

    def to_json(self) -> dict:
        return {
            "frames_in": self.frames_in,
            "frames_kept": self.frames_kept,
            "duration": self.duration,
            "fps_in": self.fps_in,
            "fps_kept": self.fps_kept,
            "clock_mode": self.clock_mode,
            "config": self.config,
            "answers": [a.to_json() for a in self.answers],
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def _config_echo(mem_cfg: MemoryConfig, gate_cfg: GateConfig) -> dict:
    echo = dataclasses.asdict(mem_cfg)
    echo.update({f"gate_{k}": v for k, v in dataclasses.asdict(gate_cfg).items()})
    return echo


def _chunk_rows(chunk) -> int:
    return sum(e.tokens.shape[0] for e in chunk.embeddings)


# ---------------------------------------------------------------------------
# simulated mode


def run_sim(
    frames,
    queries: list[QueryRequest],
    mem_cfg: MemoryConfig,
    gate_cfg: GateConfig,
    ports: PortSet,
    cost: CostModel | None = None,
) -> RunReport:
    """Deterministic single-threaded replay of the three-stage pipeline.

    Events are processed in timestamp order, frames before queries at equal
    timestamps.  The final partial buffer is flushed at stream end.
    """
    cost = cost or CostModel()
    for a, b in zip(queries, queries[1:]):
        if b.t_input < a.t_input:
            raise InputError("queries must be sorted by t_input")

    gate = FrameGate(gate_cfg)
    buf = VisionBuffer(mem_cfg.chunk_len_L)
    store = MemoryStore(mem_cfg, ports.captioner, ports.text_encoder)
    clock = SimulatedClock()
    busy_until = 0.0  # simulated shared compute resource
    answers: list[AnswerRecord] = []
    frames_in = frames_kept = 0
    first_t = last_t = None

    def handle_frame(frame: Frame):
        nonlocal frames_in, frames_kept, busy_until, first_t, last_t
        frames_in += 1
        if first_t is None:
            first_t = frame.timestamp
        last_t = frame.timestamp
        decision = gate.update(frame)
        if not decision.kept:
            return
        frames_kept += 1
        busy_until = max(busy_until, clock.now) + cost.frame_encode
        embedding = ports.frame_encoder(frame)
        store.note_embedding(embedding)
        chunk = buf.push(embedding)
        if chunk is not None:
            handle_chunk(chunk)

    def handle_chunk(chunk):
        nonlocal busy_until
        busy_until = max(busy_until, clock.now) + cost.cluster_per_row * _chunk_rows(chunk)
        store.on_chunk(chunk)

    def handle_query(req: QueryRequest):
        nonlocal busy_until
        snapshot = store.snapshot()
        error = None
        answer = ""
        digest = ""
        try:
            q = encode_query(req.question, ports.text_encoder)
            bundle = assemble_context(snapshot, q, mem_cfg)
            digest = bundle_digest(bundle)
            rows = sum(m.shape[0] for m in bundle.tree_tokens) + sum(
                e.tokens.shape[0] for e in bundle.short_term
            )
            t_start = max(req.t_input + cost.assemble_base + cost.assemble_per_row * rows,
                          busy_until)
            answer = ports.generator(bundle)
        except BackendError as exc:
            error = str(exc)
            t_start = max(req.t_input + cost.assemble_base, busy_until)
        t_done = t_start + cost.generate
        busy_until = t_done
        answers.append(
            AnswerRecord(
                question=req.question,
                answer=answer,
                t_input=req.t_input,
                t_start=t_start,
                t_done=t_done,
                rpd=t_start - req.t_input,
                bundle_digest=digest,
                error=error,
            )
        )
        if error is None:
            # appended after generation completes: a query never sees its own turn
            store.on_answer(req.question, answer, t_done)

    frame_iter = iter(frames)
    pending_frame = next(frame_iter, None)
    qi = 0
    while pending_frame is not None or qi < len(queries):
        frame_t = pending_frame.timestamp if pending_frame is not None else None
        query_t = queries[qi].t_input if qi < len(queries) else None
        if frame_t is not None and (query_t is None or frame_t <= query_t):
            clock.set(max(clock.now, frame_t))
            handle_frame(pending_frame)
            pending_frame = next(frame_iter, None)
            if pending_frame is None:
                final = buf.flush()
                if final is not None:
                    handle_chunk(final)
        else:
            clock.set(max(clock.now, query_t))
            handle_query(queries[qi])
            qi += 1

    duration = float(last_t - first_t) if frames_in else 0.0
    return RunReport(
        frames_in=frames_in,
        frames_kept=frames_kept,
        duration=duration,
        fps_in=frames_in / duration if duration > 0 else 0.0,
        fps_kept=frames_kept / duration if duration > 0 else 0.0,
        answers=answers,
        config=_config_echo(mem_cfg, gate_cfg),
        clock_mode="sim",
    )


# ---------------------------------------------------------------------------
# wall-clock mode


class Engine:
    """Live three-thread engine for wall-clock runs and the interactive mode.

    Stage 1 (frame intake) feeds chunks to stage 2 over a bounded queue that
    blocks when full; stage 2 owns all memory structures and publishes
    immutable snapshots; stage 3 is whoever calls submit_query, reading the
    latest snapshot without blocking on formation.
    """

    CHUNK_QUEUE_BOUND = 4
    DIALOGUE_QUEUE_BOUND = 64

    def __init__(self, mem_cfg: MemoryConfig, gate_cfg: GateConfig, ports: PortSet):
        self.mem_cfg = mem_cfg
        self.gate_cfg = gate_cfg
        self.ports = ports
        self.clock = WallClock()
        self._gate = FrameGate(gate_cfg)
        self._buf = VisionBuffer(mem_cfg.chunk_len_L)
        self._store = MemoryStore(mem_cfg, ports.captioner, ports.text_encoder)
        self._chunk_q: queue.Queue = queue.Queue(maxsize=self.CHUNK_QUEUE_BOUND)
        self._dialogue_q: queue.Queue = queue.Queue(maxsize=self.DIALOGUE_QUEUE_BOUND)
        self._snap_lock = threading.Lock()
        self._snapshot = self._store.snapshot()
        self._progress = float("-inf")  # last source timestamp seen by stage 1
        self._source_done = threading.Event()
        self._stop = threading.Event()
        self._stopped = False
        self.frames_in = 0
        self.frames_kept = 0
        self.last_path = None  # PathResult of the most recent query, for display
        self._threads: list[threading.Thread] = []

    # -- stage 2 helpers -----------------------------------------------------

    def _publish(self):
        snap = self._store.snapshot()
        with self._snap_lock:
            self._snapshot = snap

    def latest_snapshot(self):
        with self._snap_lock:
            return self._snapshot

    @property
    def progress(self) -> float:
        return self._progress

    # -- threads -------------------------------------------------------------

    def _stage1(self, source):
        try:
            for frame in source:
                self.frames_in += 1
                self._progress = frame.timestamp
                decision = self._gate.update(frame)
                if not decision.kept:
                    continue
                self.frames_kept += 1
                embedding = self.ports.frame_encoder(frame)
                self._store.note_embedding(embedding)
                chunk = self._buf.push(embedding)
                if chunk is not None:
                    self._chunk_q.put(chunk)  # blocks on backpressure
            final = self._buf.flush()
            if final is not None:
                self._chunk_q.put(final)
        finally:
            self._source_done.set()

    def _stage2(self):
        while True:
            try:
                chunk = self._chunk_q.get(timeout=0.002)
                self._store.on_chunk(chunk)
                self._publish()
            except queue.Empty:
                pass
            while True:
                try:
                    question, answer, t_done = self._dialogue_q.get_nowait()
                except queue.Empty:
                    break
                self._store.on_answer(question, answer, t_done)
                self._publish()
            if (
                self._stop.is_set()
                and self._source_done.is_set()
                and self._chunk_q.empty()
                and self._dialogue_q.empty()
            ):
                break

    # -- public API ----------------------------------------------------------

    def start(self, source) -> None:
        t1 = threading.Thread(target=self._stage1, args=(source,), name="frame-intake")
        t2 = threading.Thread(target=self._stage2, name="memory-formation")
        self._threads = [t1, t2]
        t2.start()
        t1.start()

    def submit_query(self, question: str) -> AnswerRecord:
        if self._stopped:
            raise InputError("engine stopped; no further queries accepted")
        t_input = self.clock.now
        snapshot = self.latest_snapshot()
        error = None
        answer = ""
        digest = ""
        try:
            q = encode_query(question, self.ports.text_encoder)
            bundle = assemble_context(snapshot, q, self.mem_cfg)
            self.last_path = bundle.path
            digest = bundle_digest(bundle)
            t_start = self.clock.now
            answer = self.ports.generator(bundle)
        except BackendError as exc:
            error = str(exc)
            t_start = self.clock.now
        t_done = self.clock.now
        if error is None:
            self._dialogue_q.put((question, answer, t_done))
        return AnswerRecord(
            question=question,
            answer=answer,
            t_input=t_input,
            t_start=t_start,
            t_done=t_done,
            rpd=t_start - t_input,
            bundle_digest=digest,
            error=error,
        )

    def wait_source_done(self, timeout: float | None = None) -> bool:
        return self._source_done.wait(timeout)

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self._stop.set()
        for t in self._threads:
            t.join()

    def report(self, answers: list[AnswerRecord]) -> RunReport:
        elapsed = self.clock.now
        return RunReport(
            frames_in=self.frames_in,
            frames_kept=self.frames_kept,
            duration=elapsed,
            fps_in=self.frames_in / elapsed if elapsed > 0 else 0.0,
            fps_kept=self.frames_kept / elapsed if elapsed > 0 else 0.0,
            answers=answers,
            config=_config_echo(self.mem_cfg, self.gate_cfg),
            clock_mode="wall",
        )


def run_wall(
    frames,
    queries: list[QueryRequest],
    mem_cfg: MemoryConfig,
    gate_cfg: GateConfig,
    ports: PortSet,
) -> RunReport:
    """Stream frames as fast as the stages allow; each query fires once the
    source has progressed past its submission timestamp."""
    engine = Engine(mem_cfg, gate_cfg, ports)
    engine.start(frames)
    answers: list[AnswerRecord] = []
    try:
        for req in queries:
            while engine.progress < req.t_input and not engine._source_done.is_set():
                time.sleep(0.001)
            answers.append(engine.submit_query(req.question))
        engine.wait_source_done()
    finally:
        engine.stop()
    return engine.report(answers)


def run(
    frames,
    queries: list[QueryRequest],
    mem_cfg: MemoryConfig,
    gate_cfg: GateConfig,
    ports: PortSet,
    clock_mode: str = "sim",
    cost: CostModel | None = None,
) -> RunReport:
    if clock_mode == "sim":
        return run_sim(frames, queries, mem_cfg, gate_cfg, ports, cost=cost)
    if clock_mode == "wall":
        return run_wall(frames, queries, mem_cfg, gate_cfg, ports)
    raise InputError(f"unknown clock mode {clock_mode!r}")
