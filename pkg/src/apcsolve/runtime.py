"""Execution backends: in-process threads and scheduler/worker sockets.

Both backends run the same epoch shape: broadcast the consensus vector,
gather exactly one update per partition (a full barrier), then apply the
consensus reduction in ascending partition order.  Because the reductions
are fixed-order and the wire format ships f8 bytes losslessly, the two
backends produce bit-identical MSE traces and solutions.

A worker process is one `worker_serve` loop: it accepts connections until a
SHUTDOWN frame arrives.  Run one from the shell with::

    python -m apcsolve.runtime 127.0.0.1:0
"""

from __future__ import annotations

import multiprocessing
import os
import socket
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import (
    MODE_DECOMPOSED,
    MODE_DGD,
    ConvergenceTrace,
    SolverParams,
    TraceRecord,
    WorkerState,
    _trace_mse,
    average_initial,
    consensus_update,
    init_worker_classical,
    init_worker_decomposed,
    local_update,
    run_dgd,
)
from .linalg import ShapeError, SingularMatrixError, SingularPivotError
from .mmio import (
    MatrixMarketError,
    SparseMatrixCSR,
    as_dense_vector,
    csr_row_block_dense,
    csr_slice_rows,
    read_matrix_market,
    write_matrix_market_file,
)
from .partition import PartitionBlock, extract_block, plan_partitions
from .protocol import (
    ERR_INTERNAL,
    ERR_MALFORMED,
    ERR_NUMERICAL,
    ERR_PROTOCOL_ORDER,
    ERROR_CODE_NAMES,
    FrameError,
    TAG_ASSIGN_PARTITION,
    TAG_ASSIGN_PARTITION_PATH,
    TAG_BROADCAST_XBAR,
    TAG_ERROR,
    TAG_INIT_RESULT,
    TAG_SHUTDOWN,
    TAG_UPDATE_RESULT,
    decode_assign,
    decode_assign_path,
    decode_broadcast,
    decode_error,
    decode_frame,
    decode_init_result,
    decode_update_result,
    encode_assign,
    encode_assign_path,
    encode_broadcast,
    encode_error,
    encode_frame,
    encode_init_result,
    encode_shutdown,
    encode_update_result,
)

__all__ = [
    "BackendConfig",
    "ProtocolError",
    "scheduler_run",
    "worker_serve",
    "start_worker_process",
    "shutdown_worker",
]

BACKEND_LOCAL_THREADS = "local_threads"
BACKEND_SOCKETS = "sockets"
_BACKENDS = (BACKEND_LOCAL_THREADS, BACKEND_SOCKETS)


class ProtocolError(RuntimeError):
    """Scheduler-side failure of a worker conversation; may carry an error code."""

    def __init__(self, message: str, code: int | None = None):
        super().__init__(message)
        self.code = code


@dataclass
class BackendConfig:
    """Where and how the partitions execute.

    ``spool_threshold_bytes``: ship a partition by file path instead of
    inline bytes when its dense payload would exceed this (None = always
    inline).  ``shutdown_at_end``: send SHUTDOWN to every worker after the
    run (leave False to reuse workers across runs).
    """

    kind: str = BACKEND_LOCAL_THREADS
    worker_endpoints: tuple[str, ...] = ()
    threads: int | None = None
    connect_timeout: float = 10.0
    init_timeout: float = 600.0
    epoch_timeout: float = 60.0
    spool_threshold_bytes: int | None = None
    spool_dir: str | None = None
    shutdown_at_end: bool = True

    def __post_init__(self):
        if self.kind not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}, got {self.kind!r}")


def _parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def _recv_frame(sock: socket.socket, buf: bytearray):
    """Read one frame; returns (tag, payload) or (None, None) on clean EOF."""
    while True:
        got = None
        if buf:
            got = _try_decode(buf)
        if got is not None:
            return got
        chunk = sock.recv(1 << 16)
        if not chunk:
            if buf:
                raise FrameError("connection closed mid-frame")
            return None, None
        buf.extend(chunk)


def _try_decode(buf: bytearray):
    got = decode_frame(buf)
    if got is None:
        return None
    tag, payload, consumed = got
    del buf[:consumed]
    return tag, payload


# --- worker side --------------------------------------------------------------


def _send_error(conn: socket.socket, code: int, message: str) -> None:
    try:
        conn.sendall(encode_frame(TAG_ERROR, encode_error(code, message)))
    except OSError:
        pass  # peer is gone; nothing useful left to do


def _load_block_from_paths(j: int, a_path: str, b_path: str) -> PartitionBlock:
    a = read_matrix_market(a_path)
    if not isinstance(a, SparseMatrixCSR):
        raise MatrixMarketError(f"{a_path}: expected a coordinate matrix")
    b = as_dense_vector(read_matrix_market(b_path))
    return PartitionBlock(
        j=j, a_block=csr_row_block_dense(a, 0, a.nrows), b_block=b
    )


def _serve_session(conn: socket.socket) -> bool:
    """Handle one scheduler connection; True means SHUTDOWN was received."""
    buf = bytearray()
    state: WorkerState | None = None
    gamma = 0.0
    while True:
        try:
            tag, payload = _recv_frame(conn, buf)
        except FrameError as exc:
            _send_error(conn, ERR_MALFORMED, str(exc))
            return False
        except OSError:
            return False
        if tag is None:
            return False
        try:
            if tag in (TAG_ASSIGN_PARTITION, TAG_ASSIGN_PARTITION_PATH):
                if tag == TAG_ASSIGN_PARTITION:
                    j, mode, gamma, a_block, b_block = decode_assign(payload)
                    block = PartitionBlock(j=j, a_block=a_block, b_block=b_block)
                else:
                    j, mode, gamma, a_path, b_path = decode_assign_path(payload)
                    block = _load_block_from_paths(j, a_path, b_path)
                init = (
                    init_worker_decomposed
                    if mode == MODE_DECOMPOSED
                    else init_worker_classical
                )
                state = init(block)
                conn.sendall(
                    encode_frame(
                        TAG_INIT_RESULT, encode_init_result(state.x, state.p_max)
                    )
                )
            elif tag == TAG_BROADCAST_XBAR:
                if state is None:
                    _send_error(
                        conn,
                        ERR_PROTOCOL_ORDER,
                        "BROADCAST_XBAR before ASSIGN_PARTITION",
                    )
                    return False
                epoch, x_bar = decode_broadcast(payload)
                x_new = local_update(state, x_bar, gamma)
                state.x = x_new
                conn.sendall(
                    encode_frame(
                        TAG_UPDATE_RESULT, encode_update_result(epoch, x_new)
                    )
                )
            elif tag == TAG_SHUTDOWN:
                return True
            else:
                _send_error(
                    conn,
                    ERR_PROTOCOL_ORDER,
                    f"tag 0x{tag:02x} is not addressed to workers",
                )
                return False
        except FrameError as exc:
            _send_error(conn, ERR_MALFORMED, str(exc))
            return False
        except MatrixMarketError as exc:
            _send_error(conn, ERR_MALFORMED, str(exc))
            return False
        except (SingularPivotError, SingularMatrixError, ShapeError, ValueError) as exc:
            _send_error(conn, ERR_NUMERICAL, str(exc))
            return False
        except OSError:
            return False
        except Exception as exc:  # keep the scheduler informed before dying
            _send_error(conn, ERR_INTERNAL, f"{type(exc).__name__}: {exc}")
            return False


def worker_serve(endpoint: str = "127.0.0.1:0", ready_queue=None) -> str:
    """Serve scheduler sessions until a SHUTDOWN frame arrives.

    Binds ``endpoint`` (port 0 picks a free port), reports the bound
    ``host:port`` through ``ready_queue.put`` if given, then accepts one
    connection at a time.
    """
    host, port = _parse_endpoint(endpoint)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind((host, port))
        srv.listen(1)
        bound = "%s:%d" % srv.getsockname()[:2]
        if ready_queue is not None:
            ready_queue.put(bound)
        while True:
            conn, _ = srv.accept()
            try:
                if _serve_session(conn):
                    return bound
            finally:
                conn.close()
    finally:
        srv.close()


def start_worker_process(endpoint: str = "127.0.0.1:0"):
    """Spawn a worker process; returns (process, bound_endpoint).

    Uses the fork start method when available so the child inherits warmed-up
    JIT state.
    """
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        ctx = multiprocessing.get_context()
    queue = ctx.Queue()
    proc = ctx.Process(target=worker_serve, args=(endpoint, queue), daemon=True)
    proc.start()
    bound = queue.get(timeout=30)
    return proc, bound


def shutdown_worker(endpoint: str, timeout: float = 10.0) -> None:
    """Connect just to deliver a SHUTDOWN frame (idempotent best effort)."""
    try:
        with socket.create_connection(_parse_endpoint(endpoint), timeout=timeout) as conn:
            conn.sendall(encode_shutdown())
    except OSError:
        pass


# --- scheduler side -------------------------------------------------------------


def _expect(conn: socket.socket, buf: bytearray, want_tag: int, j: int, phase: str):
    try:
        tag, payload = _recv_frame(conn, buf)
    except TimeoutError:
        raise ProtocolError(f"worker {j} timed out during {phase}") from None
    except FrameError as exc:
        raise ProtocolError(f"worker {j}: {exc}") from None
    except OSError as exc:
        raise ProtocolError(f"worker {j}: connection failed during {phase}: {exc}") from None
    if tag is None:
        raise ProtocolError(f"worker {j} closed the connection during {phase}")
    if tag == TAG_ERROR:
        code, message = decode_error(payload)
        raise ProtocolError(
            f"worker {j} reported {ERROR_CODE_NAMES[code]} error: {message}", code=code
        )
    if tag != want_tag:
        raise ProtocolError(
            f"worker {j} sent unexpected tag 0x{tag:02x} during {phase}"
        )
    return payload


def _run_threads(blocks, params: SolverParams, x_ref, cfg: BackendConfig):
    init_fn = (
        init_worker_decomposed
        if params.mode == MODE_DECOMPOSED
        else init_worker_classical
    )
    workers = cfg.threads or len(blocks)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        t0 = time.perf_counter()
        futures = [pool.submit(init_fn, block) for block in blocks]
        states = [f.result() for f in futures]
        init_seconds = time.perf_counter() - t0

        x_bar = average_initial([s.x for s in states])
        records = [TraceRecord(0, _trace_mse(x_bar, x_ref), 0.0)]
        elapsed = 0.0
        for t in range(params.epochs):
            t0 = time.perf_counter()
            futures = [
                pool.submit(local_update, state, x_bar, params.gamma)
                for state in states
            ]
            # barrier: every partition's update lands before the reduction,
            # merged in ascending j order
            new_xs = [f.result() for f in futures]
            for state, x_new in zip(states, new_xs):
                state.x = x_new
            x_bar = consensus_update(new_xs, x_bar, params.eta)
            elapsed += time.perf_counter() - t0
            records.append(TraceRecord(t + 1, _trace_mse(x_bar, x_ref), elapsed))
    return ConvergenceTrace(records=records, final_x=x_bar, init_seconds=init_seconds)


def _run_sockets(a, b, plan, params: SolverParams, x_ref, cfg: BackendConfig):
    endpoints = list(cfg.worker_endpoints)
    if len(endpoints) != params.num_partitions:
        raise ProtocolError(
            f"need {params.num_partitions} worker endpoints, got {len(endpoints)}"
        )
    n = plan.n_cols
    conns: list[socket.socket] = []
    bufs = [bytearray() for _ in endpoints]
    spool_dir = None
    try:
        for j, endpoint in enumerate(endpoints):
            try:
                conn = socket.create_connection(
                    _parse_endpoint(endpoint), timeout=cfg.connect_timeout
                )
            except OSError as exc:
                raise ProtocolError(f"worker {j} at {endpoint} unreachable: {exc}") from None
            conn.settimeout(cfg.init_timeout)
            conns.append(conn)

        t0 = time.perf_counter()
        for j, conn in enumerate(conns):
            start, end = plan.ranges[j]
            inline_bytes = (end - start) * n * 8
            if (
                cfg.spool_threshold_bytes is not None
                and inline_bytes > cfg.spool_threshold_bytes
            ):
                if spool_dir is None:
                    spool_dir = tempfile.mkdtemp(prefix="apcsolve-", dir=cfg.spool_dir)
                a_path = os.path.join(spool_dir, f"block{j}.a.mtx")
                b_path = os.path.join(spool_dir, f"block{j}.b.mtx")
                write_matrix_market_file(a_path, csr_slice_rows(a, start, end))
                write_matrix_market_file(b_path, np.asarray(b[start:end], dtype=np.float64))
                payload = encode_assign_path(j, params.mode, params.gamma, a_path, b_path)
                conn.sendall(encode_frame(TAG_ASSIGN_PARTITION_PATH, payload))
            else:
                block = extract_block(a, b, plan, j)
                payload = encode_assign(
                    j, params.mode, params.gamma, block.a_block, block.b_block
                )
                conn.sendall(encode_frame(TAG_ASSIGN_PARTITION, payload))

        xs = []
        for j, conn in enumerate(conns):
            payload = _expect(conn, bufs[j], TAG_INIT_RESULT, j, "initialization")
            x0, _p_max = decode_init_result(payload)
            if x0.shape != (n,):
                raise ProtocolError(
                    f"worker {j} returned a length-{x0.shape[0]} estimate, expected {n}"
                )
            xs.append(x0)
            conn.settimeout(cfg.epoch_timeout)
        init_seconds = time.perf_counter() - t0

        x_bar = average_initial(xs)
        records = [TraceRecord(0, _trace_mse(x_bar, x_ref), 0.0)]
        elapsed = 0.0
        for t in range(params.epochs):
            t0 = time.perf_counter()
            frame = encode_frame(TAG_BROADCAST_XBAR, encode_broadcast(t, x_bar))
            for conn in conns:
                conn.sendall(frame)
            new_xs = []
            for j, conn in enumerate(conns):
                # barrier: consensus waits for every partition's epoch-t update
                payload = _expect(conn, bufs[j], TAG_UPDATE_RESULT, j, f"epoch {t}")
                epoch, x_new = decode_update_result(payload)
                if epoch != t:
                    raise ProtocolError(
                        f"worker {j} answered epoch {epoch}, expected {t}"
                    )
                if x_new.shape != (n,):
                    raise ProtocolError(
                        f"worker {j} returned a length-{x_new.shape[0]} update, expected {n}"
                    )
                new_xs.append(x_new)
            x_bar = consensus_update(new_xs, x_bar, params.eta)
            elapsed += time.perf_counter() - t0
            records.append(TraceRecord(t + 1, _trace_mse(x_bar, x_ref), elapsed))
        return ConvergenceTrace(
            records=records, final_x=x_bar, init_seconds=init_seconds
        )
    finally:
        for conn in conns:
            if cfg.shutdown_at_end:
                try:
                    conn.sendall(encode_shutdown())
                except OSError:
                    pass
            conn.close()
        if spool_dir is not None:
            for name in os.listdir(spool_dir):
                os.unlink(os.path.join(spool_dir, name))
            os.rmdir(spool_dir)


def scheduler_run(
    a: SparseMatrixCSR,
    b: np.ndarray,
    params: SolverParams,
    backend: BackendConfig | None = None,
    x_ref: np.ndarray | None = None,
) -> ConvergenceTrace:
    """Partition the system and run it on the configured backend.

    The gradient-descent baseline always runs in-process (it has no
    per-worker state worth distributing); consensus modes run on threads or
    sockets per ``backend.kind``.
    """
    cfg = backend if backend is not None else BackendConfig()
    plan = plan_partitions(a.nrows, a.ncols, params.num_partitions)
    if params.mode == MODE_DGD:
        blocks = [extract_block(a, b, plan, j) for j in range(params.num_partitions)]
        return run_dgd(blocks, params, x_ref)
    if cfg.kind == BACKEND_LOCAL_THREADS:
        blocks = [extract_block(a, b, plan, j) for j in range(params.num_partitions)]
        return _run_threads(blocks, params, x_ref, cfg)
    return _run_sockets(a, b, plan, params, x_ref, cfg)


def _main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m apcsolve.runtime",
        description="Run a solver worker until it receives SHUTDOWN.",
    )
    parser.add_argument(
        "endpoint",
        nargs="?",
        default="127.0.0.1:0",
        help="host:port to bind (port 0 picks a free port; default %(default)s)",
    )
    args = parser.parse_args(argv)

    class _Announce:
        @staticmethod
        def put(bound):
            print(f"worker listening on {bound}", flush=True)

    worker_serve(args.endpoint, ready_queue=_Announce)
    return 0


if __name__ == "__main__":
    raise SystemExit(_main())
