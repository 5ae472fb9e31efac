"""TCP coordinator and site client speaking the framed protocol."""
from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass
from typing import Callable, Optional

from ..core import ParameterVector
from . import protocol as P
from .aggregate import RoundPolicy, SiteWeight
from .rounds import FedResult, GlobalModel, LocalUpdate, RoundAggregator, Trainer

log = logging.getLogger(__name__)


class FederationError(RuntimeError):
    pass


class RegistrationRejected(FederationError):
    pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class _Site:
    weight: SiteWeight
    conn: socket.socket


class Coordinator:
    """Accepts site registrations concurrently, then drives synchronous rounds.

    Registrations beyond ``expected_sites``, duplicates and late joiners get a
    SHUTDOWN reply and are disconnected.
    """

    def __init__(self, endpoint: str, expected_sites: int, policy: RoundPolicy,
                 init: GlobalModel, register_timeout: Optional[float] = 60.0,
                 round_timeout: Optional[float] = None,
                 on_round: Optional[Callable[[RoundAggregator], None]] = None):
        if expected_sites < 1:
            raise ValueError("expected_sites must be >= 1")
        self.expected = expected_sites
        self.policy = policy
        self.init = init
        self.register_timeout = register_timeout
        self.round_timeout = round_timeout
        self.on_round = on_round
        self._sites: dict[int, _Site] = {}
        self._lock = threading.Condition()
        self._started = False
        self._closing = False
        host, port = parse_endpoint(endpoint)
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()[:2]
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _reject(self, conn: socket.socket, why: str) -> None:
        log.warning("rejecting site: %s", why)
        try:
            P.send_message(conn, P.Shutdown())
        except OSError:
            pass
        conn.close()

    def _handle_new(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(self.register_timeout)
            msg = P.read_message(conn)
            conn.settimeout(self.round_timeout)
        except (P.ProtocolError, OSError) as exc:
            log.warning("bad registration: %s", exc)
            conn.close()
            return
        if not isinstance(msg, P.Register):
            self._reject(conn, f"expected REGISTER, got {type(msg).__name__}")
            return
        with self._lock:
            if self._started or self._closing:
                self._reject(conn, f"site {msg.site_id} joined after training started")
            elif msg.site_id in self._sites:
                self._reject(conn, f"duplicate site id {msg.site_id}")
            else:
                try:
                    weight = SiteWeight(msg.site_id, msg.n_drl, msg.n_rm)
                except ValueError as exc:
                    self._reject(conn, str(exc))
                    return
                self._sites[msg.site_id] = _Site(weight, conn)
                log.info("site %d registered (%d/%d)", msg.site_id, len(self._sites), self.expected)
                self._lock.notify_all()

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._handle_new, args=(conn,), daemon=True).start()

    def _broadcast(self, msg) -> None:
        frame = P.encode_message(msg)
        for sid in sorted(self._sites):
            try:
                self._sites[sid].conn.sendall(frame)
            except OSError:
                pass

    def serve(self) -> FedResult:
        self._acceptor.start()
        try:
            with self._lock:
                ok = self._lock.wait_for(lambda: len(self._sites) >= self.expected,
                                         timeout=self.register_timeout)
                if not ok:
                    raise FederationError(
                        f"only {len(self._sites)} of {self.expected} sites registered before timeout")
                self._started = True
            agg = RoundAggregator([s.weight for s in self._sites.values()], self.policy, self.init)
            while not agg.finished():
                model = agg.model
                self._broadcast(P.GlobalParams(model.round, model.theta_cdrl.values,
                                               model.theta_crm.values))
                updates = []
                for sid in agg.site_ids:
                    conn = self._sites[sid].conn
                    try:
                        msg = P.read_message(conn)
                    except (P.ProtocolError, OSError) as exc:
                        raise FederationError(f"site {sid} failed during round {model.round}: {exc}") from exc
                    if not isinstance(msg, P.LocalParams) or msg.site_id != sid:
                        raise FederationError(f"unexpected message from site {sid}: {msg!r}")
                    updates.append(LocalUpdate(
                        sid, msg.round,
                        model.theta_cdrl.with_values(msg.drl),
                        model.theta_crm.with_values(msg.rm),
                        msg.train_loss,
                    ))
                try:
                    agg.apply(updates)
                except ValueError as exc:
                    raise FederationError(str(exc)) from exc
                if self.on_round:
                    self.on_round(agg)
            self._broadcast(P.Done(agg.model.round))
            self._broadcast(P.Shutdown())
            return agg.result()
        except FederationError:
            self._broadcast(P.Shutdown())
            raise
        finally:
            self.close()

    def close(self) -> None:
        with self._lock:
            self._closing = True
        try:
            self._server.close()
        except OSError:
            pass
        for s in self._sites.values():
            try:
                s.conn.close()
            except OSError:
                pass


def coordinator_serve(endpoint: str, expected_sites: int, policy: RoundPolicy,
                      init: GlobalModel, **kwargs) -> FedResult:
    return Coordinator(endpoint, expected_sites, policy, init, **kwargs).serve()


def site_client_run(endpoint: str, weight: SiteWeight, trainer: Trainer,
                    drl_template: ParameterVector, rm_template: ParameterVector,
                    connect_timeout: float = 30.0) -> int:
    """Register, train on every broadcast, and return the final round from DONE.

    ``*_template`` vectors supply the parameter layouts for incoming blobs.
    """
    host, port = parse_endpoint(endpoint)
    with socket.create_connection((host, port), timeout=connect_timeout) as conn:
        conn.settimeout(None)
        P.send_message(conn, P.Register(weight.site_id, weight.n_drl, weight.n_rm))
        final_round = None
        seen_params = False
        while True:
            try:
                msg = P.read_message(conn)
            except P.ConnectionClosed as exc:
                raise FederationError("coordinator closed the connection") from exc
            if isinstance(msg, P.GlobalParams):
                seen_params = True
                model = GlobalModel(drl_template.with_values(msg.drl),
                                    rm_template.with_values(msg.rm), msg.round)
                upd = trainer(weight.site_id, model)
                P.send_message(conn, P.LocalParams(weight.site_id, msg.round, upd.train_loss,
                                                   upd.drl.values, upd.rm.values))
            elif isinstance(msg, P.Done):
                final_round = msg.final_round
            elif isinstance(msg, P.Shutdown):
                if final_round is None:
                    if not seen_params:
                        raise RegistrationRejected(f"site {weight.site_id} was rejected by the coordinator")
                    raise FederationError("coordinator aborted the federation")
                return final_round
            else:
                raise FederationError(f"unexpected message {msg!r}")
