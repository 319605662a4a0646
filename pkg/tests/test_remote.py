import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from streammem.errors import BackendError, ProtocolError
from streammem.ports import (
    RemoteBackendConfig,
    RemoteClient,
    RemoteJudge,
    RemoteTextEncoder,
    remote_ports,
)


class MockHandler(BaseHTTPRequestHandler):
    # class-level behaviour knobs, reset per test via the server fixture
    fail_next = 0
    delay = 0.0
    bad_json = False
    seen_auth: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        MockHandler.seen_auth.append(self.headers.get("Authorization"))
        if MockHandler.delay:
            time.sleep(MockHandler.delay)
        if MockHandler.fail_next > 0:
            MockHandler.fail_next -= 1
            self.send_response(500)
            self.end_headers()
            return
        if MockHandler.bad_json:
            self._reply(b"not json{")
            return
        if self.path == "/embed":
            vectors = [[1.0, 2.0, 3.0] for _ in payload.get("texts", [])]
            self._reply(json.dumps({"vectors": vectors}).encode())
        elif self.path == "/caption":
            self._reply(json.dumps({"caption": "scene: mock"}).encode())
        elif self.path == "/generate":
            self._reply(json.dumps({"text": "mock answer"}).encode())
        elif self.path == "/judge":
            self._reply(json.dumps({"verdict": "yes", "score": 4}).encode())
        else:
            self.send_response(404)
            self.end_headers()

    def _reply(self, body: bytes):
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class QuietServer(ThreadingHTTPServer):
    def handle_error(self, request, client_address):
        # clients deliberately disconnect mid-response in the timeout tests
        pass


@pytest.fixture
def server():
    MockHandler.fail_next = 0
    MockHandler.delay = 0.0
    MockHandler.bad_json = False
    MockHandler.seen_auth = []
    httpd = QuietServer(("127.0.0.1", 0), MockHandler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()


def client_for(url, **kw):
    defaults = dict(base_url=url, timeout=2.0, retry_count=3, backoff_base=0.01)
    defaults.update(kw)
    return RemoteClient(RemoteBackendConfig(**defaults))


def test_embed_loopback(server):
    encoder = RemoteTextEncoder(client_for(server))
    vec = encoder("hello")
    assert np.allclose(vec, [1.0, 2.0, 3.0])


def test_retry_succeeds_on_third_attempt(server):
    MockHandler.fail_next = 2
    reply = client_for(server).call("embed", {"texts": ["x"]})
    assert reply == {"vectors": [[1.0, 2.0, 3.0]]}


def test_exhausted_retries_raise_backend_error(server):
    MockHandler.fail_next = 10
    with pytest.raises(BackendError) as err:
        client_for(server).call("generate", {"bundle": {}})
    assert err.value.endpoint == "generate"
    assert err.value.attempts == 3


def test_timeout_is_backend_error(server):
    MockHandler.delay = 0.5
    client = client_for(server, timeout=0.05, retry_count=2)
    with pytest.raises(BackendError):
        client.call("embed", {"texts": ["x"]})


def test_malformed_response_is_protocol_error(server):
    MockHandler.bad_json = True
    with pytest.raises(ProtocolError):
        client_for(server).call("caption", {"captions": [], "tags": []})


def test_judge_schema_validation(server):
    judge = RemoteJudge(client_for(server))
    assert judge("q", "ref", "pred") == ("yes", 4)


def test_api_key_sent_as_bearer(server, monkeypatch):
    monkeypatch.setenv("MOCK_API_KEY", "sekrit")
    client = client_for(server, api_key_env_var="MOCK_API_KEY")
    client.call("embed", {"texts": ["x"]})
    assert MockHandler.seen_auth[-1] == "Bearer sekrit"


def test_remote_portset_same_shapes_as_stub(server):
    ports = remote_ports(RemoteBackendConfig(base_url=server, backoff_base=0.01))
    vec = ports.text_encoder("hi")
    assert vec.ndim == 1
    assert ports.judge("q", "r", "p") == ("yes", 4)
