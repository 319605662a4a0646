"""Model ports and their deterministic stubs.

Four model components (frame encoder, text encoder, captioner, generator)
plus a judge are pluggable.  The stubs are engineered so retrieval behaviour
is testable end-to-end with no ML runtime: text encoding is signed feature
hashing, captions are tag unions, generation echoes the retrieved context.
A minimal JSON-over-HTTP client lets real models replace the stubs.
"""

from __future__ import annotations

import hashlib
import os
import re
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import BackendError, InputError, ProtocolError
from .frame_gate import Chunk, Frame, VisionEmbedding

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def hash_text_encode(text: str, dim: int = 256) -> np.ndarray:
    """Signed feature hashing of whitespace/punctuation-split tokens into
    `dim` buckets, normalized to unit length.  Empty text -> zero vector."""
    if dim < 8:
        raise InputError("embedding dim must be >= 8")
    vec = np.zeros(dim, dtype=np.float64)
    for token in _tokenize(text):
        digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        # two independent (bucket, sign) pairs per token: a pair of tokens
        # only aliases if both bucket/sign pairs coincide (~1/dim^2), so a
        # single hash collision cannot make unrelated texts look identical
        low, high = value & 0xFFFFFFFF, value >> 32
        vec[low % dim] += 1.0 if (low >> 31) & 1 else -1.0
        vec[high % dim] += 1.0 if (high >> 31) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


class StubTextEncoder:
    def __init__(self, dim: int = 256):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        return hash_text_encode(text, self.dim)


class StubFrameEncoder:
    """Token row j is a seeded normal vector keyed by (tags, coarse 4x4
    intensity histogram, j).  Quantizing the histogram makes near-equal
    frames encode identically."""

    def __init__(self, n: int = 4, d: int = 32, hist_levels: int = 8):
        self.n = n
        self.d = d
        self.hist_levels = hist_levels

    def _histogram_key(self, pixels: np.ndarray) -> bytes:
        h, w = pixels.shape
        cells = []
        for i in range(4):
            for j in range(4):
                block = pixels[i * h // 4 : (i + 1) * h // 4, j * w // 4 : (j + 1) * w // 4]
                cells.append(int(round(float(block.mean()) * (self.hist_levels - 1))))
        return bytes(cells)

    def __call__(self, frame: Frame) -> VisionEmbedding:
        key_base = repr(frame.tags).encode() + self._histogram_key(frame.pixels)
        rows = []
        for j in range(self.n):
            digest = hashlib.blake2b(key_base + bytes([j]), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            row = rng.standard_normal(self.d)
            rows.append(row / np.linalg.norm(row))
        return VisionEmbedding(
            tokens=np.array(rows),
            source_timestamp=frame.timestamp,
            source_tags=frame.tags,
        )


class TagCaptioner:
    """Caption = sorted, deduplicated union of scene tags."""

    PREFIX = "scene: "

    def caption_chunk(self, chunk: Chunk) -> str:
        return self._format(set(chunk.tags))

    def summarize(self, captions: list[str]) -> str:
        tags: set[str] = set()
        for caption in captions:
            body = caption[len(self.PREFIX) :] if caption.startswith(self.PREFIX) else caption
            tags.update(t.strip() for t in body.split(",") if t.strip())
        tags.discard("unknown")
        return self._format(tags)

    def _format(self, tags: set[str]) -> str:
        if not tags:
            return self.PREFIX + "unknown"
        return self.PREFIX + ", ".join(sorted(tags))


class EchoGenerator:
    """Answers by echoing the best tree caption and any recalled turn, which
    makes end-to-end answer content assertable in tests."""

    def __call__(self, bundle) -> str:
        parts = []
        if bundle.path is not None and bundle.path.best_caption:
            parts.append(bundle.path.best_caption)
        if bundle.dialogue_context is not None:
            q, a = bundle.dialogue_context
            parts.append(f"(recalling: {q} -> {a})")
        if not parts:
            parts.append("no visual memory yet")
        return " | ".join(parts)


def exact_match_judge(question: str, reference: str, prediction: str) -> tuple[str, int]:
    """Token-set F1 mapped to a 0..5 score (round-half-to-even); verdict yes
    iff score >= 3."""
    ref = set(_tokenize(reference))
    pred = set(_tokenize(prediction))
    if not ref or not pred:
        f1 = 1.0 if ref == pred else 0.0
    else:
        overlap = len(ref & pred)
        if overlap == 0:
            f1 = 0.0
        else:
            precision = overlap / len(pred)
            recall = overlap / len(ref)
            f1 = 2 * precision * recall / (precision + recall)
    score = round(5 * f1)
    return ("yes" if score >= 3 else "no", score)


class StubJudge:
    def __call__(self, question: str, reference: str, prediction: str) -> tuple[str, int]:
        return exact_match_judge(question, reference, prediction)


@dataclass
class PortSet:
    frame_encoder: object  # Frame -> VisionEmbedding
    text_encoder: object  # str -> np.ndarray
    captioner: object  # caption_chunk / summarize
    generator: object  # PromptBundle -> str
    judge: object  # (question, reference, prediction) -> (verdict, score)


def stub_ports(n: int = 4, d: int = 32, text_dim: int = 256) -> PortSet:
    return PortSet(
        frame_encoder=StubFrameEncoder(n=n, d=d),
        text_encoder=StubTextEncoder(dim=text_dim),
        captioner=TagCaptioner(),
        generator=EchoGenerator(),
        judge=StubJudge(),
    )


# ---------------------------------------------------------------------------
# remote backend


@dataclass(frozen=True)
class RemoteBackendConfig:
    base_url: str
    timeout: float = 10.0
    retry_count: int = 3
    api_key_env_var: str = ""
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise InputError("timeout must be positive")


class RemoteClient:
    """POSTs JSON payloads to base_url/{endpoint} with exponential backoff."""

    ENDPOINTS = ("embed", "caption", "generate", "judge")

    def __init__(self, cfg: RemoteBackendConfig):
        self.cfg = cfg
        self.session = requests.Session()

    def call(self, endpoint: str, payload: dict) -> dict:
        if endpoint not in self.ENDPOINTS:
            raise InputError(f"unknown endpoint {endpoint!r}")
        headers = {}
        if self.cfg.api_key_env_var:
            key = os.environ.get(self.cfg.api_key_env_var)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        url = self.cfg.base_url.rstrip("/") + "/" + endpoint
        attempts = self.cfg.retry_count
        last_error = None
        for attempt in range(attempts):
            try:
                resp = self.session.post(
                    url, json=payload, timeout=self.cfg.timeout, headers=headers
                )
                if 200 <= resp.status_code < 300:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProtocolError(
                            f"non-JSON response from {endpoint}", endpoint=endpoint
                        ) from exc
                last_error = f"HTTP {resp.status_code}"
            except ProtocolError:
                raise
            except requests.RequestException as exc:
                last_error = str(exc)
            if attempt + 1 < attempts:
                time.sleep(self.cfg.backoff_base * (2**attempt))
        raise BackendError(
            f"{endpoint} failed after {attempts} attempts: {last_error}",
            endpoint=endpoint,
            attempts=attempts,
        )


def _require(payload: dict, key: str, endpoint: str):
    if key not in payload:
        raise ProtocolError(f"missing field {key!r} in {endpoint} response", endpoint=endpoint)
    return payload[key]


class RemoteTextEncoder:
    def __init__(self, client: RemoteClient):
        self.client = client

    def __call__(self, text: str) -> np.ndarray:
        reply = self.client.call("embed", {"texts": [text]})
        vectors = _require(reply, "vectors", "embed")
        return np.asarray(vectors[0], dtype=np.float64)


class RemoteCaptioner:
    def __init__(self, client: RemoteClient):
        self.client = client

    def caption_chunk(self, chunk: Chunk) -> str:
        reply = self.client.call("caption", {"captions": [], "tags": list(chunk.tags)})
        return _require(reply, "caption", "caption")

    def summarize(self, captions: list[str]) -> str:
        reply = self.client.call("caption", {"captions": list(captions), "tags": []})
        return _require(reply, "caption", "caption")


class RemoteGenerator:
    def __init__(self, client: RemoteClient):
        self.client = client

    def __call__(self, bundle) -> str:
        from .retrieval import bundle_to_json

        reply = self.client.call("generate", {"bundle": bundle_to_json(bundle)})
        return _require(reply, "text", "generate")


class RemoteJudge:
    def __init__(self, client: RemoteClient):
        self.client = client

    def __call__(self, question: str, reference: str, prediction: str) -> tuple[str, int]:
        reply = self.client.call(
            "judge",
            {"question": question, "reference": reference, "prediction": prediction},
        )
        verdict = _require(reply, "verdict", "judge")
        score = _require(reply, "score", "judge")
        if verdict not in ("yes", "no") or not isinstance(score, int):
            raise ProtocolError("malformed judge response", endpoint="judge")
        return (verdict, score)


def remote_ports(cfg: RemoteBackendConfig, n: int = 4, d: int = 32) -> PortSet:
    """Remote text/caption/generate/judge; the frame encoder stays a local
    stub since the wire protocol carries no pixel endpoint."""
    client = RemoteClient(cfg)
    return PortSet(
        frame_encoder=StubFrameEncoder(n=n, d=d),
        text_encoder=RemoteTextEncoder(client),
        captioner=RemoteCaptioner(client),
        generator=RemoteGenerator(client),
        judge=RemoteJudge(client),
    )
