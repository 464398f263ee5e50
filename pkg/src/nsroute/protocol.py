"""Interface <-> server wire protocol.

Four roles take part in every exchange:

* IP_SEND (interface): :func:`encode_job` ships the job envelope.
* IP_RECEIVE (server): :func:`decode_job` then :func:`run_job` executes it.
* OP_SEND (server): :func:`op_send` encodes staged outputs and clears scratch.
* OP_RECEIVE (interface): :func:`decode_results`, :func:`store_outputs` and
  :func:`release_server`.

Frames are LF-terminated ASCII header lines followed by raw bodies whose byte
length is declared in the header, so bodies never need escaping::

    JOB <job_id> <external_ip> <app> <network> <server> <n_files> <payload_len>\\n<payload>
    FILE <name> <length>\\n<content>      (repeated)
    EXIT\\n
    STATUS <app> <network> <server>\\n
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .catalog import NsMap, is_ipv4, is_token
from .errors import (
    ExecutorFailure,
    FrameError,
    LengthMismatch,
    NotBusy,
    TruncatedFrame,
)
from .hashing import fnv1a_64

_UINT_RE = re.compile(rb"(0|[1-9][0-9]*)\Z")
_NAME_RE = re.compile(r"[A-Za-z0-9_.\-]+\Z")


def valid_file_name(name) -> bool:
    return (isinstance(name, str) and _NAME_RE.match(name) is not None
            and name not in (".", ".."))


@dataclass(frozen=True)
class JobEnvelope:
    job_id: str
    external_ip: str
    app: str
    network: str
    server: str
    n_files: int
    payload: bytes = b""


@dataclass(frozen=True)
class FileTransfer:
    name: str
    content: bytes

    @property
    def length(self) -> int:
        return len(self.content)


@dataclass(frozen=True)
class StatusLine:
    app: str
    network: str
    server: str

    def __str__(self):
        return f"{self.app} {self.network} {self.server}"


def _check_envelope(e: JobEnvelope, error=FrameError):
    for name in ("job_id", "app", "network", "server"):
        if not is_token(getattr(e, name)):
            raise error(f"bad {name} {getattr(e, name)!r}")
    if not is_ipv4(e.external_ip):
        raise error(f"bad external_ip {e.external_ip!r}")
    if not isinstance(e.n_files, int) or e.n_files < 1:
        raise error(f"n_files must be >= 1, got {e.n_files!r}")


def _uint(field: bytes, what: str) -> int:
    if not _UINT_RE.match(field):
        raise FrameError(f"non-numeric {what}: {field!r}")
    return int(field)


def _read_line(data: bytes, pos: int) -> tuple:
    end = data.find(b"\n", pos)
    if end < 0:
        raise TruncatedFrame(f"missing LF after offset {pos}")
    line = data[pos:end]
    try:
        line.decode("ascii")
    except UnicodeDecodeError:
        raise FrameError(f"non-ASCII header at offset {pos}") from None
    return line, end + 1


# --- IP_SEND / IP_RECEIVE --------------------------------------------------

def encode_job(e: JobEnvelope) -> bytes:
    _check_envelope(e, ValueError)
    header = (f"JOB {e.job_id} {e.external_ip} {e.app} {e.network} {e.server} "
              f"{e.n_files} {len(e.payload)}\n")
    return header.encode("ascii") + bytes(e.payload)


def decode_job(data: bytes) -> JobEnvelope:
    line, pos = _read_line(data, 0)
    fields = line.split(b" ")
    if fields[0] != b"JOB":
        raise FrameError(f"bad magic {fields[0]!r}")
    if len(fields) != 8:
        raise FrameError(f"JOB header has {len(fields)} fields, expected 8")
    n_files = _uint(fields[6], "n_files")
    payload_len = _uint(fields[7], "payload_len")
    body = data[pos:pos + payload_len]
    if len(body) < payload_len:
        raise TruncatedFrame(f"payload has {len(body)} of {payload_len} bytes")
    if pos + payload_len != len(data):
        raise FrameError(f"{len(data) - pos - payload_len} trailing bytes after payload")
    job_id, ip, app, net, srv = (f.decode("ascii") for f in fields[1:6])
    e = JobEnvelope(job_id, ip, app, net, srv, n_files, body)
    _check_envelope(e)
    return e


def stub_execute(job_id: str, app: str, payload: bytes, n_files: int) -> list:
    """Deterministic stand-in for the real application run.

    File ``i`` is ``<app>_out<i>.dat`` holding the 16-char lowercase hex
    FNV-1a-64 digest of ``job_id:app:i``.
    """
    if n_files < 1:
        raise ValueError("n_files must be >= 1")
    return [
        FileTransfer(
            name=f"{app}_out{i}.dat",
            content=format(fnv1a_64(f"{job_id}:{app}:{i}".encode()), "016x").encode("ascii"),
        )
        for i in range(1, n_files + 1)
    ]


Executor = Callable[[str, str, bytes, int], list]


def run_job(e: JobEnvelope, executor: Executor = stub_execute,
            scratch: Optional[dict] = None) -> list:
    """Execute on the receiving server, staging outputs in ``scratch[job_id]``."""
    try:
        files = executor(e.job_id, e.app, e.payload, e.n_files)
    except ExecutorFailure:
        if scratch is not None:
            scratch.pop(e.job_id, None)
        raise
    if len(files) != e.n_files:
        raise ExecutorFailure(f"{e.job_id}: executor produced {len(files)} of {e.n_files} files")
    if scratch is not None:
        scratch[e.job_id] = list(files)
    return list(files)


# --- OP_SEND / OP_RECEIVE --------------------------------------------------

def encode_results(files, status: StatusLine) -> bytes:
    parts = []
    for f in files:
        if not valid_file_name(f.name):
            raise ValueError(f"bad file name {f.name!r}")
        parts.append(f"FILE {f.name} {len(f.content)}\n".encode("ascii"))
        parts.append(bytes(f.content))
    for name in ("app", "network", "server"):
        if not is_token(getattr(status, name)):
            raise ValueError(f"bad status {name} {getattr(status, name)!r}")
    parts.append(b"EXIT\n")
    parts.append(f"STATUS {status}\n".encode("ascii"))
    return b"".join(parts)


def op_send(scratch: dict, job_id: str, status: StatusLine) -> bytes:
    """Encode the staged outputs of ``job_id`` and delete them from scratch."""
    files = scratch.pop(job_id)
    return encode_results(files, status)


def decode_results(data: bytes) -> tuple:
    files = []
    pos = 0
    while True:
        line, pos = _read_line(data, pos)
        fields = line.split(b" ")
        if fields[0] == b"EXIT":
            if len(fields) != 1:
                raise FrameError("EXIT takes no fields")
            break
        if fields[0] != b"FILE":
            if files:
                raise LengthMismatch(f"expected FILE or EXIT after body of {files[-1].name!r}, got {line[:32]!r}")
            raise FrameError(f"bad magic {fields[0]!r}")
        if len(fields) != 3:
            raise FrameError(f"FILE header has {len(fields)} fields, expected 3")
        name = fields[1].decode("ascii")
        if not valid_file_name(name):
            raise FrameError(f"bad file name {name!r}")
        length = _uint(fields[2], "file length")
        body = data[pos:pos + length]
        if len(body) < length:
            raise TruncatedFrame(f"{name}: {len(body)} of {length} bytes")
        pos += length
        files.append(FileTransfer(name, body))
    line, pos = _read_line(data, pos)
    fields = line.split(b" ")
    if fields[0] != b"STATUS" or len(fields) != 4:
        raise FrameError(f"expected STATUS <app> <network> <server>, got {line[:48]!r}")
    app, net, srv = (f.decode("ascii") for f in fields[1:])
    if not all(is_token(x) for x in (app, net, srv)):
        raise FrameError(f"bad STATUS fields {line!r}")
    if pos != len(data):
        raise FrameError(f"{len(data) - pos} trailing bytes after STATUS")
    return files, StatusLine(app, net, srv)


def store_outputs(root, external_ip: str, files) -> list:
    """Write files to ``<root>/<external_ip>/<name>``, replacing earlier copies."""
    if not is_ipv4(external_ip):
        raise ValueError(f"bad external_ip {external_ip!r}")
    for f in files:
        if not valid_file_name(f.name):
            raise ValueError(f"bad file name {f.name!r}")
    if not files:
        return []
    target = Path(root) / external_ip
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in files:
        path = target / f.name
        tmp = path.with_name(path.name + ".part")
        tmp.write_bytes(f.content)
        os.replace(tmp, path)
        paths.append(path)
    return paths


def release_server(nsmap: NsMap, status: StatusLine) -> NsMap:
    net = nsmap.network(status.network)
    srv = net.server(status.server)
    if not srv.busy or srv.current_load < 1:
        raise NotBusy(f"{status.network}:{status.server} is not busy")
    srv.current_load -= 1
    srv.busy = srv.current_load > 0
    net.current_load -= 1
    return nsmap
