"""HTTP chat service: loads a checkpoint, answers POST /api/reply, reports
GET /api/health, and serves the web chat client at the root.

Model parameters are loaded once and shared read-only; every request decodes
independently, with a semaphore bounding in-flight decodes. The only mutable
shared state is the optional append-only transcript log."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .corpus import UNK_ID, clean_text, encode_source
from .decode import DecodeConfig, beam_search, postprocess_reply
from .errors import BadRequest, BindError, ModelNotLoaded
from .train import Checkpoint, load_checkpoint

FALLBACK_REPLY = "Sorry, I dint understand your context"

MAX_TEXT_CHARS = 2000
MAX_BODY_BYTES = 64 * 1024
MAX_UNK_RATIO = 0.5

DEFAULT_BIND = ("127.0.0.1", 8080)
DEFAULT_MAX_INFLIGHT = 4

_BUILTIN_PAGE = """<!DOCTYPE html>
<html lang="en">
<head><meta charset="utf-8"><title>seqchat</title>
<style>
body{font-family:sans-serif;max-width:40em;margin:2em auto}
#log div{margin:.3em 0;padding:.4em .8em;border-radius:8px;width:fit-content;max-width:80%}
.human{background:#cfe3ff;margin-left:auto}
.bot{background:#ffd9b3}
</style></head>
<body>
<h1>seqchat</h1>
<p>Minimal built-in client (no web bundle installed).</p>
<div id="log"></div>
<form id="f"><input id="t" autocomplete="off" autofocus><button>Send</button></form>
<script>
const log=document.getElementById("log"),t=document.getElementById("t");
function bubble(cls,text){const d=document.createElement("div");d.className=cls;
d.textContent=text;log.appendChild(d);}
document.getElementById("f").addEventListener("submit",async e=>{
e.preventDefault();const text=t.value.trim();if(!text)return;t.value="";
bubble("human",text);
const r=await fetch("/api/reply",{method:"POST",
headers:{"Content-Type":"application/json"},body:JSON.stringify({text})});
const d=await r.json();bubble("bot",d.reply||d.error||"(error)");});
</script>
</body></html>
"""


@dataclass
class ReplyResult:
    reply: str
    fallback_used: bool
    latency_ms: float


class ChatEngine:
    """Checkpointed model + the text-in/text-out reply pipeline."""

    def __init__(self, checkpoint: Checkpoint, beam_width: int | None = None):
        self.config = checkpoint.config
        self.vocab = checkpoint.vocab
        self.params = checkpoint.params
        self.beam_width = beam_width if beam_width is not None else self.config.beam_width

    @classmethod
    def from_file(cls, path, beam_width: int | None = None) -> "ChatEngine":
        return cls(load_checkpoint(path), beam_width)

    def reply(self, text: str) -> ReplyResult:
        """clean -> tokenize -> encode into the smallest fitting bucket ->
        beam search -> detokenize. Falls back to the canned reply when the
        input fits no bucket, is mostly out-of-vocabulary, or decodes to
        nothing; the reply is therefore never empty."""
        if not text or not text.strip():
            raise BadRequest("empty text")
        if len(text) > MAX_TEXT_CHARS:
            raise BadRequest(f"text longer than {MAX_TEXT_CHARS} characters")
        started = time.perf_counter()

        def finish(reply: str, fallback: bool) -> ReplyResult:
            return ReplyResult(reply, fallback, (time.perf_counter() - started) * 1000.0)

        tokens = clean_text(text).split()
        if not tokens:
            return finish(FALLBACK_REPLY, True)
        ids = [self.vocab.id(t) for t in tokens]
        if sum(i == UNK_ID for i in ids) / len(ids) > MAX_UNK_RATIO:
            return finish(FALLBACK_REPLY, True)
        encoded = encode_source(tokens, self.vocab, self.config.buckets,
                                self.config.reverse_source)
        if encoded is None:
            return finish(FALLBACK_REPLY, True)
        src_ids, bucket_index = encoded
        max_steps = self.config.buckets[bucket_index].tgt_cap
        out_ids = beam_search(src_ids, self.params,
                              DecodeConfig(beam_width=self.beam_width),
                              max_steps=max_steps)
        reply = postprocess_reply(out_ids, self.vocab)
        if not reply:
            return finish(FALLBACK_REPLY, True)
        return finish(reply, False)


class _Handler(BaseHTTPRequestHandler):
    server: "ChatServer"  # type: ignore[assignment]
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_file(self, data: bytes, content_type: str) -> None:
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/api/health":
            engine = self.server.engine
            if engine is None:
                self._send_json(503, {"error": "model not loaded"})
                return
            self._send_json(200, {
                "status": "ok",
                "vocab_size": len(engine.vocab),
                "checkpoint": str(self.server.checkpoint_path),
                "beam_width": engine.beam_width,
            })
            return
        static = self.server.static_files()
        name = "index.html" if self.path == "/" else self.path.lstrip("/")
        if name in static:
            data, content_type = static[name]
            self._send_file(data, content_type)
            return
        self._send_json(404, {"error": "not found"})

    def do_POST(self):
        if self.path != "/api/reply":
            self._send_json(404, {"error": "not found"})
            return
        engine = self.server.engine
        if engine is None:
            self._send_json(503, {"error": "model not loaded"})
            return
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self._send_json(400, {"error": "missing content length"})
            return
        if length > MAX_BODY_BYTES:
            self.close_connection = True
            self._send_json(400, {"error": "request body too large"})
            return
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
                raise ValueError("payload must be an object with a string 'text'")
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_json(400, {"error": f"bad request: {exc}"})
            return
        session_id = payload.get("session_id")
        try:
            with self.server.inflight:
                result = engine.reply(payload["text"])
        except BadRequest as exc:
            self._send_json(400, {"error": str(exc)})
            return
        self.server.log_transcript(session_id, payload["text"], result)
        self._send_json(200, {
            "reply": result.reply,
            "fallback_used": result.fallback_used,
            "latency_ms": result.latency_ms,
        })


_CONTENT_TYPES = {".html": "text/html; charset=utf-8",
                  ".js": "text/javascript; charset=utf-8",
                  ".css": "text/css; charset=utf-8"}


class ChatServer(ThreadingHTTPServer):
    """The chat service; use serve() to construct one."""

    daemon_threads = True

    def __init__(self, bind, engine: ChatEngine | None, checkpoint_path,
                 max_inflight: int = DEFAULT_MAX_INFLIGHT,
                 static_dir=None, transcript_path=None, verbose: bool = False):
        try:
            super().__init__(bind, _Handler)
        except OSError as exc:
            raise BindError(f"cannot bind {bind[0]}:{bind[1]}: {exc}") from exc
        self.engine = engine
        self.checkpoint_path = checkpoint_path
        self.inflight = threading.Semaphore(max_inflight)
        self.static_dir = Path(static_dir) if static_dir else None
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._transcript_lock = threading.Lock()
        self._static_cache: dict[str, tuple[bytes, str]] | None = None
        self.verbose = verbose

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def static_files(self) -> dict[str, tuple[bytes, str]]:
        if self._static_cache is None:
            files: dict[str, tuple[bytes, str]] = {}
            if self.static_dir is not None and self.static_dir.is_dir():
                for entry in sorted(self.static_dir.iterdir()):
                    ctype = _CONTENT_TYPES.get(entry.suffix)
                    if entry.is_file() and ctype:
                        files[entry.name] = (entry.read_bytes(), ctype)
            if "index.html" not in files:
                files["index.html"] = (_BUILTIN_PAGE.encode("utf-8"), _CONTENT_TYPES[".html"])
            self._static_cache = files
        return self._static_cache

    def log_transcript(self, session_id, text: str, result: ReplyResult) -> None:
        if self.transcript_path is None:
            return
        record = json.dumps({
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "session_id": session_id,
            "text": text,
            "reply": result.reply,
            "fallback_used": result.fallback_used,
        }, ensure_ascii=False)
        with self._transcript_lock:
            with open(self.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(record + "\n")

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(checkpoint_path, bind: tuple[str, int] = DEFAULT_BIND,
          beam_width: int | None = None, max_inflight: int = DEFAULT_MAX_INFLIGHT,
          static_dir=None, transcript_path=None, verbose: bool = False) -> ChatServer:
    """Load the checkpoint and return a bound (not yet running) ChatServer;
    call serve_forever() or start() on it."""
    engine = ChatEngine.from_file(checkpoint_path, beam_width)
    if engine.params is None:  # pragma: no cover - load_checkpoint raises first
        raise ModelNotLoaded(str(checkpoint_path))
    return ChatServer(bind, engine, checkpoint_path, max_inflight,
                      static_dir, transcript_path, verbose)
