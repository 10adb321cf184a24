"""Networked mode: a TCP hub service and the agent client loop.

One frame per message (see `wire`). A hub serves uploads, cursor-based
downloads, and peer synchronization; peers sync periodically on a timer.
Malformed frames get an ERR reply and the connection survives; a peer or
agent crash only ever costs that node's own unsent data.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
import time

from .config import ExperimentConfig
from .hashing import fnv1a64
from .hubnet import HubDatabase
from .learner import QFunction, evaluate, train_round
from .replay import ExperienceReplayBuffer
from .rng import derive_rng
from .sim import METRICS_HEADER, MetricRow
from .wire import (
    Message,
    MsgType,
    WireError,
    decode_download_req,
    decode_erb_list,
    decode_id_set,
    deserialize_erb,
    encode_download_req,
    encode_erb_list,
    encode_id_set,
    encode_message,
    read_frame_header,
    serialize_erb,
)

log = logging.getLogger("adfll.net")

CONNECT_RETRIES = 20
CONNECT_BACKOFF_S = 0.25
UPLOAD_RETRIES = 64


class NetError(ConnectionError):
    pass


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address {addr!r} is not host:port")
    return host, int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def send_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_message(msg))


def recv_message(sock: socket.socket) -> Message | None:
    """Read one frame; None on clean EOF. The length is validated before the
    payload is read, so an oversize declaration never allocates."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    length = read_frame_header(header)
    body = _recv_exact(sock, length)
    if body is None:
        raise NetError("connection closed mid-frame")
    mtype_byte = body[0]
    try:
        mtype = MsgType(mtype_byte)
    except ValueError:
        raise WireError(f"unknown message type {mtype_byte}") from None
    return Message(mtype, body[1:])


def connect_with_retry(addr: tuple[str, int],
                       retries: int = CONNECT_RETRIES) -> socket.socket:
    delay = CONNECT_BACKOFF_S
    for attempt in range(retries):
        try:
            return socket.create_connection(addr, timeout=30.0)
        except OSError:
            if attempt == retries - 1:
                raise
            time.sleep(delay)
            delay = min(delay * 2, 2.0)
    raise NetError("unreachable")


class HubServer:
    """Threaded hub node: one handler thread per connection plus an optional
    periodic peer-sync thread. All database mutations are serialized."""

    def __init__(
        self,
        hub_id: str,
        listen: str,
        peers: tuple[str, ...] = (),
        dropout_p: float = 0.0,
        seed: int = 0,
        manifest_path: str | None = None,
        sync_period_s: float = 1.0,
    ):
        self.hub_id = hub_id
        self.listen_addr = parse_addr(listen)
        self.peers = tuple(peers)
        self.dropout_p = dropout_p
        self.rng = derive_rng(seed, "hubserver", hub_id)
        self.manifest_path = manifest_path
        self.sync_period_s = sync_period_s
        self.db = HubDatabase(hub_id)
        self.lock = threading.Lock()
        self._stop = threading.Event()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self.port: int | None = None

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self.listen_addr)
        self._listener.listen(32)
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        accept = threading.Thread(target=self._accept_loop, daemon=True)
        accept.start()
        self._threads.append(accept)
        if self.peers:
            syncer = threading.Thread(target=self._sync_loop, daemon=True)
            syncer.start()
            self._threads.append(syncer)
        self._write_manifest()
        log.info("hub %s listening on %s:%d", self.hub_id, *self.listen_addr[:1], self.port)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        for t in self._threads:
            t.join(timeout=2.0)

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def digest(self) -> tuple[int, ...]:
        with self.lock:
            return self.db.digest()

    # -- internals ---------------------------------------------------------

    def _write_manifest(self) -> None:
        if self.manifest_path is None:
            return
        tmp = f"{self.manifest_path}.tmp"
        self.db.write_manifest(tmp)
        os.replace(tmp, self.manifest_path)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()

    def _serve_conn(self, conn: socket.socket) -> None:
        with conn:
            while not self._stop.is_set():
                try:
                    msg = recv_message(conn)
                except WireError as e:
                    try:
                        send_message(conn, Message(MsgType.ERR, str(e).encode()))
                        continue
                    except OSError:
                        return
                except (NetError, OSError):
                    return
                if msg is None:
                    return
                try:
                    reply = self._handle(msg)
                except WireError as e:
                    reply = Message(MsgType.ERR, str(e).encode())
                except Exception as e:  # defensive: never kill the hub
                    log.warning("hub %s handler error: %s", self.hub_id, e)
                    reply = Message(MsgType.ERR, str(e).encode())
                try:
                    send_message(conn, reply)
                except OSError:
                    return

    def _handle(self, msg: Message) -> Message:
        if msg.type == MsgType.UPLOAD:
            erb = deserialize_erb(msg.payload)  # validates the payload
            rid = fnv1a64(msg.payload)
            with self.lock:
                if self.dropout_p > 0.0 and self.rng.chance(self.dropout_p):
                    return Message(MsgType.ACK, b"")  # dropped: empty ack
                self.db.insert_bytes(rid, erb.meta, msg.payload)
                self._write_manifest()
            return Message(MsgType.ACK, rid.to_bytes(8, "little"))
        if msg.type == MsgType.DOWNLOAD_REQ:
            agent_id, exclude_self = decode_download_req(msg.payload)
            with self.lock:
                erbs, outcome = self.db.download_new(
                    agent_id, exclude_self, self.dropout_p, self.rng
                )
                blobs = [self.db.records[rid][1] for rid in outcome.delivered]
            return Message(MsgType.DOWNLOAD_RESP, encode_erb_list(blobs))
        if msg.type == MsgType.SYNC_DIGEST:
            decode_id_set(msg.payload)  # validated; reply with our own digest
            with self.lock:
                return Message(MsgType.SYNC_DIGEST, encode_id_set(self.db.digest()))
        if msg.type == MsgType.SYNC_PULL:
            wanted = decode_id_set(msg.payload)
            with self.lock:
                blobs = [
                    self.db.records[rid][1] for rid in wanted if rid in self.db.records
                ]
            return Message(MsgType.SYNC_RESP, encode_erb_list(blobs))
        if msg.type == MsgType.ACK:
            return Message(MsgType.ACK, b"")
        raise WireError(f"hub cannot serve message type {msg.type.name}")

    def _sync_loop(self) -> None:
        while not self._stop.wait(self.sync_period_s):
            for peer in self.peers:
                try:
                    self.sync_with_peer(peer)
                except (OSError, WireError, NetError) as e:
                    log.info("hub %s: sync with %s failed: %s", self.hub_id, peer, e)

    def sync_with_peer(self, peer: str) -> None:
        """Initiator side of one anti-entropy session with a peer hub."""
        with socket.create_connection(parse_addr(peer), timeout=10.0) as sock:
            send_message(sock, Message(MsgType.SYNC_DIGEST, encode_id_set(self.digest())))
            reply = recv_message(sock)
            if reply is None or reply.type != MsgType.SYNC_DIGEST:
                raise NetError("peer did not answer digest")
            theirs = set(decode_id_set(reply.payload))
            mine = set(self.digest())
            want = sorted(theirs - mine)
            if want:
                send_message(sock, Message(MsgType.SYNC_PULL, encode_id_set(want)))
                resp = recv_message(sock)
                if resp is None or resp.type != MsgType.SYNC_RESP:
                    raise NetError("peer did not answer pull")
                with self.lock:
                    for blob in decode_erb_list(resp.payload):
                        erb = deserialize_erb(blob)
                        self.db.insert_bytes(fnv1a64(blob), erb.meta, blob)
                    self._write_manifest()
            for rid in sorted(mine - theirs):
                with self.lock:
                    blob = self.db.records[rid][1]
                send_message(sock, Message(MsgType.UPLOAD, blob))
                ack = recv_message(sock)
                if ack is None or ack.type not in (MsgType.ACK, MsgType.ERR):
                    raise NetError("push not acknowledged")


class HubClient:
    """Agent-side protocol adapter; one connection per exchange session."""

    def __init__(self, hub_addr: str):
        self.addr = parse_addr(hub_addr)

    def upload(self, erb: ExperienceReplayBuffer) -> bool:
        payload = serialize_erb(erb)
        with connect_with_retry(self.addr) as sock:
            for _ in range(UPLOAD_RETRIES):
                send_message(sock, Message(MsgType.UPLOAD, payload))
                reply = recv_message(sock)
                if reply is None:
                    raise NetError("hub closed during upload")
                if reply.type == MsgType.ACK and reply.payload:
                    return True
                if reply.type == MsgType.ERR:
                    raise NetError(f"hub rejected upload: {reply.payload.decode()}")
        return False

    def download_new(self, agent_id: str) -> list[ExperienceReplayBuffer]:
        with connect_with_retry(self.addr) as sock:
            send_message(
                sock,
                Message(MsgType.DOWNLOAD_REQ, encode_download_req(agent_id, True)),
            )
            reply = recv_message(sock)
            if reply is None or reply.type != MsgType.DOWNLOAD_RESP:
                raise NetError("hub did not answer download")
            return [deserialize_erb(b) for b in decode_erb_list(reply.payload)]


def run_agent(
    hub_addr: str,
    cfg: ExperimentConfig,
    agent_id: str,
    out_dir: str | None = None,
) -> int:
    """Execute an agent's schedule against a live hub; returns exit status."""
    spec = next((a for a in cfg.agents if a.agent_id == agent_id), None)
    if spec is None:
        log.error("agent %s not in config", agent_id)
        return 2
    client = HubClient(hub_addr)
    rng = cfg.agent_rng(agent_id)
    qf = QFunction(cfg.train.backend, cfg.train.n_cells)
    personal: list[ExperienceReplayBuffer] = []
    inbox: dict[int, ExperienceReplayBuffer] = {}
    target = min(cfg.rounds_to_complete, len(spec.task_schedule))
    try:
        for rnd in range(1, target + 1):
            env = cfg.env_for_task(spec.task_schedule[rnd - 1])
            result = train_round(
                qf, env, personal, list(inbox.values()), cfg.train, rng,
                agent_id=agent_id, round_index=rnd, created_seq=len(personal),
            )
            personal.append(result.published_erb)
            if not client.upload(result.published_erb):
                log.error("agent %s: upload never acknowledged", agent_id)
                return 1
            for erb in client.download_new(agent_id):
                inbox[erb.content_id()] = erb
            log.info("agent %s finished round %d (%d incoming)", agent_id, rnd, len(inbox))
    except (NetError, OSError) as e:
        log.error("agent %s: hub communication failed: %s", agent_id, e)
        return 1
    if cfg.eval_task_ids and out_dir is not None:
        errors = evaluate(
            qf,
            cfg.eval_envs(),
            cfg.eval_episodes,
            cfg.eval_rng(),
            max_steps=cfg.effective_eval_max_steps(),
            terminal_radius=cfg.train.terminal_radius,
            half_extent=cfg.train.half_extent,
        )
        rows = [
            MetricRow(target, "final", agent_id, t, errors[t], cfg.eval_episodes)
            for t in cfg.eval_task_ids
        ]
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"metrics_{agent_id}.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write(METRICS_HEADER + "\n")
            f.write("\n".join(r.to_csv_row() for r in rows) + "\n")
    return 0
