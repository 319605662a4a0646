"""Benchmark harness: synthetic scene streams with ground truth, trace
replay, metric computation, parameter sweeps, and an interactive mode.

The harness is a single-threaded driver around the pipeline engine; only the
engine's internal stages are concurrent.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .frame_gate import Frame, GateConfig
from .memory_core import MemoryConfig, derive_seed
from .pipeline import AnswerRecord, CostModel, Engine, QueryRequest, RunReport, run
from .ports import PortSet

TASK_TYPES = ("OS", "LM", "SM", "CI", "KG", "SF")


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SceneDef:
    tags: tuple[str, ...]
    duration: float
    motion: float  # in [0, 1]

    def __post_init__(self):
        if self.duration <= 0:
            raise InputError("scene duration must be positive")
        if not 0.0 <= self.motion <= 1.0:
            raise InputError("motion level must be in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    scenes: tuple[SceneDef, ...]
    fps: float = 5.0
    noise: float = 0.0
    seed: int = 0
    frame_size: int = 48
    max_shift: float = 3.0

    def __post_init__(self):
        if self.fps <= 0:
            raise InputError("fps must be positive")

    def to_json(self) -> dict:
        return {
            "scenes": [
                {"tags": list(s.tags), "duration": s.duration, "motion": s.motion}
                for s in self.scenes
            ],
            "fps": self.fps,
            "noise": self.noise,
            "seed": self.seed,
            "frame_size": self.frame_size,
            "max_shift": self.max_shift,
        }

    @staticmethod
    def from_json(doc: dict) -> "SceneSpec":
        return SceneSpec(
            scenes=tuple(
                SceneDef(tags=tuple(s["tags"]), duration=s["duration"], motion=s["motion"])
                for s in doc["scenes"]
            ),
            fps=doc.get("fps", 5.0),
            noise=doc.get("noise", 0.0),
            seed=doc.get("seed", 0),
            frame_size=doc.get("frame_size", 48),
            max_shift=doc.get("max_shift", 3.0),
        )


def smooth_texture(rng: np.random.Generator, size: int, cutoff: int = 2) -> np.ndarray:
    """Periodic low-frequency texture: FFT low-pass of white noise, scaled to
    [0.15, 0.85].  Periodicity keeps np.roll shifts exact at the borders.

    The default cutoff keeps the texture smooth enough that the gradient
    linearization stays accurate over multi-pixel shifts, and gradient-rich
    enough that unrelated textures register as large apparent motion."""
    noise = rng.standard_normal((size, size))
    spectrum = np.fft.fft2(noise)
    freq = np.fft.fftfreq(size) * size
    mask = (np.abs(freq)[:, None] <= cutoff) & (np.abs(freq)[None, :] <= cutoff)
    tex = np.real(np.fft.ifft2(spectrum * mask))
    lo, hi = tex.min(), tex.max()
    if hi - lo < 1e-12:
        return np.full((size, size), 0.5)
    return 0.15 + 0.7 * (tex - lo) / (hi - lo)


def synth_scenes(spec: SceneSpec):
    """Yield (frames, timeline): per scene, a tag-keyed base texture translated
    by motion * max_shift px per frame plus seeded noise."""
    frames: list[Frame] = []
    timeline: list[tuple[float, float, tuple[str, ...]]] = []
    t = 0.0
    frame_index = 0
    noise_rng = np.random.default_rng(derive_seed(spec.seed, "noise", 0))
    for i, scene in enumerate(spec.scenes):
        tex_seed = derive_seed(spec.seed, "scene-tex:" + "|".join(scene.tags), 0)
        tex = smooth_texture(np.random.default_rng(tex_seed), spec.frame_size)
        count = max(1, int(round(scene.duration * spec.fps)))
        t0 = t
        offset = 0.0
        for j in range(count):
            shifted = np.roll(tex, int(round(offset)), axis=1)
            if spec.noise > 0:
                shifted = np.clip(
                    shifted + noise_rng.normal(0.0, spec.noise, shifted.shape), 0.0, 1.0
                )
            frames.append(Frame(pixels=shifted, timestamp=t, tags=scene.tags))
            offset += scene.motion * spec.max_shift
            frame_index += 1
            t = frame_index / spec.fps
        timeline.append((t0, frames[-1].timestamp, scene.tags))
    return frames, timeline


def frames_from_dir(path: str | Path, fps: float = 1.0) -> list[Frame]:
    """Grayscale PGM images ordered by filename, timestamps index/fps."""
    files = sorted(Path(path).glob("*.pgm"))
    if not files:
        raise InputError(f"no .pgm files in {path}")
    return [Frame.from_pgm(f, timestamp=i / fps) for i, f in enumerate(files)]


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceQuery:
    t_input: float
    question: str
    reference_answer: str
    task_type: str

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise InputError(f"unknown task type {self.task_type!r}")


@dataclass(frozen=True)
class Trace:
    source: dict  # {"kind": "synthetic", "spec": {...}} | {"kind": "dir", ...}
    queries: tuple[TraceQuery, ...]

    def frames(self) -> list[Frame]:
        kind = self.source.get("kind")
        if kind == "synthetic":
            frames, _ = synth_scenes(SceneSpec.from_json(self.source["spec"]))
            return frames
        if kind == "dir":
            return frames_from_dir(self.source["path"], self.source.get("fps", 1.0))
        raise InputError(f"unknown frame source kind {kind!r}")


def save_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", "source": trace.source}) + "\n")
        for q in trace.queries:
            fh.write(
                json.dumps(
                    {
                        "type": "query",
                        "t_input": q.t_input,
                        "question": q.question,
                        "reference_answer": q.reference_answer,
                        "task_type": q.task_type,
                    }
                )
                + "\n"
            )


def load_trace(path: str | Path) -> Trace:
    source = None
    queries: list[TraceQuery] = []
    try:
        fh = open(path)
    except OSError as exc:
        raise InputError(f"cannot read trace {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            kind = doc.get("type")
            if kind == "header":
                source = doc.get("source")
            elif kind == "query":
                try:
                    queries.append(
                        TraceQuery(
                            t_input=float(doc["t_input"]),
                            question=doc["question"],
                            reference_answer=doc.get("reference_answer", ""),
                            task_type=doc.get("task_type", "SF"),
                        )
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise InputError(f"{path}:{lineno}: bad query record: {exc}") from exc
            else:
                raise InputError(f"{path}:{lineno}: unknown record type {kind!r}")
    if source is None:
        raise InputError(f"{path}: trace has no header record")
    if any(b.t_input < a.t_input for a, b in zip(queries, queries[1:])):
        raise InputError(f"{path}: queries not sorted by t_input")
    return Trace(source=source, queries=tuple(queries))


_TAG_POOL = (
    "kitchen", "garden", "workshop", "harbor", "library",
    "market", "rooftop", "cellar", "meadow", "station",
    "forge", "orchard", "quarry", "lagoon", "summit",
)


def gen_trace(
    num_scenes: int = 5,
    scene_duration: float = 20.0,
    fps: float = 5.0,
    motion: float = 0.5,
    noise: float = 0.0,
    seed: int = 0,
) -> Trace:
    """Build a synthetic trace: one tagged scene per segment, one recall query
    per scene after it ends, plus an opening SF query and a CI follow-up."""
    rng = np.random.default_rng(derive_seed(seed, "trace", 0))
    tags = list(_TAG_POOL)
    rng.shuffle(tags)
    scenes = tuple(
        SceneDef(tags=(tags[i % len(tags)],), duration=scene_duration, motion=motion)
        for i in range(num_scenes)
    )
    spec = SceneSpec(scenes=scenes, fps=fps, noise=noise, seed=seed)
    total = num_scenes * scene_duration
    queries: list[TraceQuery] = [
        TraceQuery(
            t_input=min(5.0, total / 2),
            question="what scene is showing right now",
            reference_answer=f"scene: {scenes[0].tags[0]}",
            task_type="SF",
        )
    ]
    for i, scene in enumerate(scenes):
        end = (i + 1) * scene_duration
        delay = 10.0 if end + 10.0 < total else 2.0
        task = "SM" if delay <= 20.0 else "LM"
        tag = scene.tags[0]
        queries.append(
            TraceQuery(
                t_input=min(end + delay, total - 0.5),
                question=f"what was happening in the {tag} scene",
                reference_answer=f"scene: {tag}",
                task_type=task,
            )
        )
    first_tag = scenes[0].tags[0]
    queries.append(
        TraceQuery(
            t_input=total - 0.25,
            question=f"earlier i asked about the {first_tag} scene, remind me about the {first_tag} scene",
            reference_answer=f"scene: {first_tag}",
            task_type="CI",
        )
    )
    queries.sort(key=lambda q: q.t_input)
    return Trace(source={"kind": "synthetic", "spec": spec.to_json()}, queries=tuple(queries))


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ScoredAnswer:
    record: AnswerRecord
    score: int
    verdict: str
    task_type: str = "SF"


@dataclass(frozen=True)
class MetricsReport:
    mean_score: float
    accuracy: float
    coherence: float | None  # absent with a single turn
    rpd_mean: float
    rpd_p95: float
    per_task: dict

    def to_json(self) -> dict:
        return {
            "mean_score": self.mean_score,
            "accuracy": self.accuracy,
            "coherence": self.coherence,
            "rpd_mean": self.rpd_mean,
            "rpd_p95": self.rpd_p95,
            "per_task": self.per_task,
        }


def compute_metrics(scored: list[ScoredAnswer], threshold: int = 3) -> MetricsReport:
    """Mean score, indicator accuracy at the threshold, coherence as the mean
    absolute difference of consecutive turn scores, and delay statistics."""
    if not scored:
        raise InputError("need at least one scored answer")
    scores = np.array([s.score for s in scored], dtype=np.float64)
    rpds = np.array([s.record.rpd for s in scored], dtype=np.float64)
    coherence = None
    if len(scores) >= 2:
        coherence = float(np.mean(np.abs(np.diff(scores))))
    per_task: dict = {}
    for task in TASK_TYPES:
        subset = [s for s in scored if s.task_type == task]
        if subset:
            sub_scores = np.array([s.score for s in subset], dtype=np.float64)
            per_task[task] = {
                "count": len(subset),
                "mean_score": float(sub_scores.mean()),
                "accuracy": float((sub_scores >= threshold).mean()),
            }
    return MetricsReport(
        mean_score=float(scores.mean()),
        accuracy=float((scores >= threshold).mean()),
        coherence=coherence,
        rpd_mean=float(rpds.mean()),
        rpd_p95=float(np.percentile(rpds, 95)),
        per_task=per_task,
    )


# ---------------------------------------------------------------------------
# benchmark runs


def judge_answers(
    report: RunReport, queries: tuple[TraceQuery, ...], judge
) -> list[ScoredAnswer]:
    scored = []
    for record, query in zip(report.answers, queries):
        if record.error is not None:
            scored.append(ScoredAnswer(record=record, score=0, verdict="no",
                                       task_type=query.task_type))
            continue
        verdict, score = judge(query.question, query.reference_answer, record.answer)
        scored.append(ScoredAnswer(record=record, score=score, verdict=verdict,
                                   task_type=query.task_type))
    return scored


def run_benchmark(
    trace: Trace,
    mem_cfg: MemoryConfig,
    gate_cfg: GateConfig,
    ports: PortSet,
    out_dir: str | Path | None = None,
    clock_mode: str = "sim",
    threshold: int = 3,
    cost: CostModel | None = None,
):
    """Run the pipeline over a trace, judge every answer, and (optionally)
    write report.json plus transcript.jsonl to out_dir."""
    frames = trace.frames()
    requests = [QueryRequest(question=q.question, t_input=q.t_input) for q in trace.queries]
    report = run(frames, requests, mem_cfg, gate_cfg, ports, clock_mode=clock_mode, cost=cost)
    scored = judge_answers(report, trace.queries, ports.judge)
    metrics = compute_metrics(scored, threshold) if scored else None

    doc = report.to_json()
    doc["metrics"] = metrics.to_json() if metrics else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        with open(out / "transcript.jsonl", "w") as fh:
            for s, q in zip(scored, trace.queries):
                fh.write(
                    json.dumps(
                        {
                            "question": s.record.question,
                            "answer": s.record.answer,
                            "reference_answer": q.reference_answer,
                            "task_type": s.task_type,
                            "score": s.score,
                            "verdict": s.verdict,
                            "t_input": s.record.t_input,
                            "t_start": s.record.t_start,
                            "rpd": s.record.rpd,
                            "bundle_digest": s.record.bundle_digest,
                            "error": s.record.error,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    return report, metrics, doc


SWEEP_PARAMS = {
    "t": "threshold_t",
    "L": "chunk_len_L",
    "g": "group_size_g",
    "C": "cluster_goal_C",
}

SWEEP_COLUMNS = ["value", "accuracy", "rpd_mean", "fps", "kept_ratio"]


def sweep(
    trace: Trace,
    parameter: str,
    values: list,
    mem_cfg: MemoryConfig,
    gate_cfg: GateConfig,
    ports: PortSet,
    out_path: str | Path | None = None,
    clock_mode: str = "sim",
) -> list[dict]:
    """One benchmark run per parameter value with fixed seeds; returns (and
    optionally writes) one CSV row per value."""
    if parameter not in SWEEP_PARAMS:
        raise InputError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
    if not values:
        raise InputError("sweep needs at least one value")
    rows = []
    for value in values:
        cfg = dataclasses.replace(mem_cfg, **{SWEEP_PARAMS[parameter]: value})
        gcfg = gate_cfg
        if parameter == "t":
            gcfg = dataclasses.replace(gate_cfg, threshold_t=value)
        report, metrics, _ = run_benchmark(
            trace, cfg, gcfg, ports, out_dir=None, clock_mode=clock_mode
        )
        rows.append(
            {
                "value": value,
                "accuracy": metrics.accuracy if metrics else "",
                "rpd_mean": metrics.rpd_mean if metrics else "",
                "fps": report.fps_in,
                "kept_ratio": report.frames_kept / report.frames_in if report.frames_in else 0.0,
            }
        )
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# interactive mode


def repl(
    mem_cfg: MemoryConfig,
    gate_cfg: GateConfig,
    ports: PortSet,
    spec: SceneSpec,
    stdin=None,
    stdout=None,
) -> RunReport:
    """Stream a synthetic source in wall-clock mode and answer questions read
    from standard input; 'quit' or end-of-input shuts down cleanly."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    frames, _ = synth_scenes(spec)
    engine = Engine(mem_cfg, gate_cfg, ports)
    engine.start(iter(frames))
    answers: list[AnswerRecord] = []
    try:
        for line in stdin:
            question = line.strip()
            if not question:
                continue
            if question == "quit":
                break
            record = engine.submit_query(question)
            answers.append(record)
            print(f"answer: {record.answer}", file=stdout)
            print(f"rpd: {record.rpd:.4f}s", file=stdout)
            if engine.last_path is not None and engine.last_path.steps:
                path_str = " -> ".join(
                    f"L{s.level}#{s.index}({s.similarity:.4f})" for s in engine.last_path.steps
                )
                print(f"path: {path_str}", file=stdout)
    finally:
        engine.stop()
    report = engine.report(answers)
    print(json.dumps(report.to_json(), sort_keys=True), file=stdout)
    return report
