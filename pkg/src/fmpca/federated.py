"""Federated MPCA over a simulated honest-but-curious multi-party protocol.

Actors are :class:`Participant` objects (one per data owner) and a
coordinating :class:`Server`. Every value that crosses an actor boundary goes
through a :class:`Transport` as a :class:`Message`; the in-memory bus keeps a
log of all of them so runs can be audited after the fact.

Protocol steps
--------------
1. ``fed_centralize``: pairwise-masked local means are averaged by the server;
   the antisymmetric masks cancel in the weighted sum.
2. ``fed_initialize``: for each mode, users pass a (basis, singular values)
   pair along a chain, each folding in its local concatenated unfolding with
   :func:`fmpca.linalg.incremental_update`. The last user truncates.
3. ``fed_local_opt_round``: the same chain on unfoldings right-multiplied by
   the Kronecker chain of the other factors.
4. ``fed_mpca``: orchestration with scalar scatter reports to the server.
"""

from __future__ import annotations

import hashlib
import json
import logging
from abc import ABC, abstractmethod
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .linalg import SingularState, incremental_update, left_svd, truncate_left
from .mpca import (
    DEFAULT_MAX_ITER,
    DEFAULT_RELATIVE_ETA,
    MpcaModel,
    partial_unfolding,
    ranks_from_spectrum,
    scatter,
)
from .tensor import multi_mode_project, tnsr_bytes, unfold_samples

logger = logging.getLogger(__name__)

__all__ = [
    "PAYLOAD_KINDS",
    "Message",
    "Transport",
    "InMemoryBus",
    "Participant",
    "Server",
    "FedResult",
    "pair_mask",
    "fed_centralize",
    "fed_initialize",
    "fed_local_opt_round",
    "fed_scatter",
    "fed_mpca",
    "secure_sum",
    "audit_log",
    "export_log",
    "make_participants",
]

PAYLOAD_KINDS = frozenset(
    {"masked-mean", "singular-state", "truncated-factor", "scalar-scatter", "mask-tensor"}
)
SERVER = "server"

# mask stream purposes, folded into the per-pair seed
_PURPOSE = {"centralize": 0, "scatter": 1, "lls": 2}


def digest(a: np.ndarray) -> str:
    return hashlib.sha256(tnsr_bytes(np.atleast_1d(a))).hexdigest()


@dataclass
class Message:
    sender: str
    receiver: str
    tag: str
    kind: str
    payload: tuple

    def __post_init__(self):
        if self.kind not in PAYLOAD_KINDS:
            raise ValueError(f"unknown payload kind {self.kind!r}")
        self.payload = tuple(np.array(p, dtype=np.float64) for p in self.payload)

    @property
    def part_digests(self) -> list[str]:
        return [digest(p) for p in self.payload]

    @property
    def digest(self) -> str:
        return hashlib.sha256("".join(self.part_digests).encode()).hexdigest()

    def log_record(self) -> dict:
        return {
            "tag": self.tag,
            "sender": self.sender,
            "receiver": self.receiver,
            "kind": self.kind,
            "digest": self.digest,
        }


class Transport(ABC):
    """Point-to-point delivery, FIFO per (sender, receiver) pair."""

    @abstractmethod
    def send(self, msg: Message) -> None: ...

    @abstractmethod
    def receive(self, sender: str, receiver: str) -> Message: ...


class InMemoryBus(Transport):
    """Synchronous deterministic transport that records every message."""

    def __init__(self):
        self._queues: dict[tuple[str, str], deque] = defaultdict(deque)
        self.log: list[Message] = []

    def send(self, msg: Message) -> None:
        self._queues[(msg.sender, msg.receiver)].append(msg)
        self.log.append(msg)

    def receive(self, sender: str, receiver: str) -> Message:
        queue = self._queues[(sender, receiver)]
        if not queue:
            raise RuntimeError(f"no pending message from {sender} to {receiver}")
        return queue.popleft()

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())


def pair_mask(seed, sender: int, receiver: int, shape, purpose="centralize",
              distribution="uniform") -> np.ndarray:
    """Mask tensor that ``sender`` draws for ``receiver``.

    The stream is keyed by (seed, lower id, higher id, direction, purpose), so a
    rerun reproduces the same masks without any key agreement.
    """
    lo, hi = sorted((int(sender), int(receiver)))
    direction = 0 if sender < receiver else 1
    entropy = [int(v) for v in np.atleast_1d(seed)] + [lo, hi, direction, _PURPOSE[purpose]]
    rng = np.random.default_rng(entropy)
    if distribution == "uniform":
        return rng.random(shape)
    if distribution == "normal":
        return rng.standard_normal(shape)
    raise ValueError(f"unknown mask distribution {distribution!r}")


class Participant:
    """One data owner. Raw samples never leave this object."""

    def __init__(self, user_id: int, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim < 2 or samples.shape[0] < 1:
            raise ValueError(f"user {user_id} needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"user {user_id} has non-finite samples")
        self.user_id = int(user_id)
        self.samples = samples
        self.centered: np.ndarray | None = None
        self.global_mean: np.ndarray | None = None
        self.factors: dict[int, np.ndarray] = {}
        self._sent_masks: dict[int, np.ndarray] = {}
        self._recv_masks: dict[int, np.ndarray] = {}
        # digests of local intermediates that must never appear on the wire
        self.private_digests: set[str] = set()

    @property
    def address(self) -> str:
        return f"user:{self.user_id}"

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.samples.shape[1:]

    def _remember(self, *arrays) -> None:
        for a in arrays:
            self.private_digests.add(digest(a))

    def local_mean(self) -> np.ndarray:
        mean = self.samples.mean(axis=0)
        self._remember(mean)
        return mean

    def perturbation(self, peers: Iterable[int]) -> np.ndarray:
        """Sum of ``R_{d,d'} = S_{d,d'} - S_{d',d}`` over all peers."""
        total = np.zeros(self.dims)
        for peer in peers:
            total = total + (self._sent_masks[peer] - self._recv_masks[peer])
        return total

    def center(self, global_mean: np.ndarray) -> None:
        self.global_mean = np.array(global_mean)
        self.centered = self.samples - self.global_mean

    def local_block(self, n: int, factors=None) -> np.ndarray:
        """Concatenated mode-n unfolding of the centered data, optionally
        right-multiplied by the Kronecker chain of the other factors."""
        if self.centered is None:
            raise RuntimeError(f"user {self.user_id} has not been centered yet")
        if factors is None:
            block = unfold_samples(self.centered, n)
        else:
            block = partial_unfolding(self.centered, factors, n)
        self._remember(block, block @ block.T)
        return block

    def local_scatter(self, factors) -> float:
        return scatter(self.centered, factors)

    def features(self, factors) -> np.ndarray:
        return np.stack([multi_mode_project(x, factors) for x in self.samples])


@dataclass
class Server:
    """Coordinator: sees only sample counts, aggregates, and shared factors."""

    counts: dict[int, int] = field(default_factory=dict)
    global_mean: np.ndarray | None = None
    factors: dict[int, np.ndarray] = field(default_factory=dict)
    scatter_history: list[float] = field(default_factory=list)
    address: str = SERVER


def _ordered(participants: Sequence[Participant], order=None) -> list[Participant]:
    if not participants:
        raise ValueError("at least one participant is required")
    dims = {p.dims for p in participants}
    if len(dims) != 1:
        raise ValueError(f"participants disagree on tensor dims: {sorted(dims)}")
    ids = [p.user_id for p in participants]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate user ids")
    if order is None:
        return sorted(participants, key=lambda p: p.user_id)
    by_id = {p.user_id: p for p in participants}
    return [by_id[i] for i in order]


def secure_sum(participants, values: dict[int, np.ndarray], bus: Transport, seed,
               tag: str, purpose: str, distribution="uniform") -> np.ndarray:
    """Server-side sum of per-user arrays, each sent with pairwise masks added."""
    users = _ordered(participants)
    shape = np.shape(values[users[0].user_id])
    ids = [p.user_id for p in users]
    masks = {}
    for p in users:
        for q in ids:
            if q == p.user_id:
                continue
            s = pair_mask(seed, p.user_id, q, shape, purpose, distribution)
            bus.send(Message(p.address, f"user:{q}", tag, "mask-tensor", (s,)))
    for p in users:
        recv = {q: bus.receive(f"user:{q}", p.address).payload[0] for q in ids if q != p.user_id}
        sent = {q: pair_mask(seed, p.user_id, q, shape, purpose, distribution)
                for q in ids if q != p.user_id}
        noise = np.zeros(shape)
        for q in ids:
            if q != p.user_id:
                noise = noise + (sent[q] - recv[q])
        masks[p.user_id] = np.asarray(values[p.user_id]) + noise
        bus.send(Message(p.address, SERVER, tag, "masked-mean", (masks[p.user_id],)))
    total = np.zeros(shape)
    for p in users:
        total = total + bus.receive(p.address, SERVER).payload[0]
    return total


def fed_centralize(participants, server: Server, rng_seed, bus: Transport | None = None,
                   distribution="uniform") -> np.ndarray:
    """Securely compute the pooled mean and center every participant's data.

    Each user ``d`` sends ``mean_d + (1/M_d) sum_{d'} R_{d,d'}`` with its sample
    count; the server returns ``sum_d M_d * masked_d / sum_d M_d``.
    """
    bus = bus or InMemoryBus()
    users = _ordered(participants)
    ids = [p.user_id for p in users]
    shape = users[0].dims

    for p in users:
        for q in ids:
            if q == p.user_id:
                continue
            s = pair_mask(rng_seed, p.user_id, q, shape, "centralize", distribution)
            p._sent_masks[q] = s
            bus.send(Message(p.address, f"user:{q}", "centralize", "mask-tensor", (s,)))

    for p in users:
        peers = [q for q in ids if q != p.user_id]
        for q in peers:
            p._recv_masks[q] = bus.receive(f"user:{q}", p.address).payload[0]
        masked = p.local_mean() + p.perturbation(peers) / p.count
        bus.send(Message(p.address, SERVER, "centralize", "masked-mean",
                         (masked, np.array([p.count]))))

    weighted = np.zeros(shape)
    total = 0
    for p in users:
        masked, count = bus.receive(p.address, SERVER).payload
        m_d = int(count[0])
        server.counts[p.user_id] = m_d
        weighted = weighted + m_d * masked
        total += m_d
    server.global_mean = weighted / total

    for p in users:
        bus.send(Message(SERVER, p.address, "centralize", "masked-mean",
                         (server.global_mean,)))
        p.center(bus.receive(SERVER, p.address).payload[0])
    return server.global_mean


def _chain(users: list[Participant], build: Callable[[Participant], np.ndarray],
           rank, tag: str, n: int, server: Server, bus: Transport):
    state: SingularState | None = None
    for i, p in enumerate(users):
        if i > 0:
            u, s = bus.receive(users[i - 1].address, p.address).payload
            state = SingularState(u, s)
        block = build(p)
        state = left_svd(block) if state is None else incremental_update(state, block)
        if i < len(users) - 1:
            bus.send(Message(p.address, users[i + 1].address, tag, "singular-state",
                             (state.u, state.s)))
    last = users[-1]
    p_n = ranks_from_spectrum(state.s, rank) if isinstance(rank, float) else int(rank)
    factor = truncate_left(state, p_n)
    bus.send(Message(last.address, SERVER, tag, "truncated-factor", (factor,)))
    server.factors[n] = bus.receive(last.address, SERVER).payload[0]
    for p in users:
        bus.send(Message(SERVER, p.address, tag, "truncated-factor", (server.factors[n],)))
        p.factors[n] = bus.receive(SERVER, p.address).payload[0]
    return server.factors[n], state.s


def fed_initialize(participants, n: int, rank, server: Server | None = None,
                   bus: Transport | None = None, order=None):
    """Chain SVD of the centered mode-``n`` unfoldings; returns the shared factor.

    ``rank`` is either ``P_n`` or a variation fraction, resolved by the last
    user from the chained singular values. Returns ``(factor, singular_values)``.
    """
    users = _ordered(participants, order)
    return _chain(users, lambda p: p.local_block(n), rank, f"init({n})", n,
                  server or Server(), bus or InMemoryBus())


def fed_local_opt_round(participants, n: int, factors, rank, server: Server | None = None,
                        bus: Transport | None = None, order=None, k: int = 1):
    """One federated local-optimization update of mode ``n``.

    Each user right-multiplies its unfoldings by the Kronecker chain of the
    other (downloaded) factors before joining the chain.
    """
    users = _ordered(participants, order)
    factors = [np.asarray(u) for u in factors]
    return _chain(users, lambda p: p.local_block(n, factors), rank,
                  f"localopt({k},{n})", n, server or Server(), bus or InMemoryBus())


def fed_scatter(participants, factors, server: Server, bus: Transport, k: int,
                masked=False, seed=0) -> float:
    """Users report local scatters; the server sums them."""
    users = _ordered(participants)
    tag = f"scatter({k})"
    local = {p.user_id: np.array([p.local_scatter(factors)]) for p in users}
    if masked:
        return float(secure_sum(users, local, bus, [seed, k], tag, "scatter")[0])
    total = 0.0
    for p in users:
        bus.send(Message(p.address, SERVER, tag, "scalar-scatter", (local[p.user_id],)))
    for p in users:
        total += float(bus.receive(p.address, SERVER).payload[0][0])
    return total


@dataclass
class FedResult:
    factors: list[np.ndarray]
    features: dict[int, np.ndarray]
    scatter_history: list[float]
    iterations_run: int
    converged: bool
    mean: np.ndarray
    log: list[Message]

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.factors)

    def to_model(self) -> MpcaModel:
        return MpcaModel(self.mean, list(self.factors), list(self.scatter_history),
                         self.iterations_run, self.converged)


def fed_mpca(participants, server: Server | None = None, ranks=0.97, eta=None,
             max_iter=DEFAULT_MAX_ITER, seed=0, order=None, bus: Transport | None = None,
             mask_distribution="uniform", mask_scatter=False) -> FedResult:
    """Run the full federated MPCA protocol.

    Parameters
    ----------
    participants : sequence of Participant
    server : Server, optional
    ranks : sequence of int or float
        Explicit ranks or a variation fraction resolved during initialization.
    eta : float, optional
        Stop when the scatter gain of a sweep is at most ``eta``
        (default ``1e-6 * Psi_0``).
    max_iter : int
    seed : int
        Seed of the pairwise mask streams.
    order : sequence of int, optional
        Chain order of user ids; ascending ids by default.
    mask_scatter : bool
        Also mask the scalar scatter reports (off by default).

    Returns
    -------
    FedResult
        Non-convergence within ``max_iter`` is reported via ``converged``.
    """
    server = server or Server()
    bus = bus or InMemoryBus()
    users = _ordered(participants, order)
    ndim = len(users[0].dims)
    if not isinstance(ranks, float):
        ranks = tuple(int(p) for p in ranks)
        if len(ranks) != ndim:
            raise ValueError(f"expected {ndim} ranks, got {len(ranks)}")

    fed_centralize(users, server, seed, bus, mask_distribution)

    for n in range(ndim):
        rank = ranks if isinstance(ranks, float) else ranks[n]
        fed_initialize(users, n, rank, server, bus, order)
    factors = [server.factors[n] for n in range(ndim)]

    server.scatter_history = [fed_scatter(users, factors, server, bus, 0, mask_scatter, seed)]
    tol = DEFAULT_RELATIVE_ETA * server.scatter_history[0] if eta is None else eta
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        for n in range(ndim):
            fed_local_opt_round(users, n, factors, factors[n].shape[1], server, bus, order, k)
            factors[n] = server.factors[n]
        server.scatter_history.append(
            fed_scatter(users, factors, server, bus, k, mask_scatter, seed))
        if server.scatter_history[-1] - server.scatter_history[-2] <= tol:
            converged = True
            break
    if not converged:
        logger.info("FMPCA stopped after %d sweeps without meeting eta=%g", k, tol)

    features = {p.user_id: p.features([p.factors[n] for n in range(ndim)]) for p in users}
    log = list(getattr(bus, "log", []))
    return FedResult(factors, features, list(server.scatter_history), k, converged,
                     server.global_mean, log)


# -- audit and export ---------------------------------------------------------


def _forbidden_digests(participants) -> set[str]:
    out = set()
    for p in participants:
        out |= p.private_digests
        out.add(digest(p.samples.mean(axis=0)))
        for x in p.samples:
            out.add(digest(x))
        if p.centered is not None:
            for x in p.centered:
                out.add(digest(x))
        for n in range(len(p.dims)):
            out.add(digest(unfold_samples(p.samples, n)))
            if p.centered is not None:
                a = unfold_samples(p.centered, n)
                out.add(digest(a))
                out.add(digest(a @ a.T))
    return out


def audit_log(log: Sequence[Message], participants) -> list[str]:
    """Privacy findings for a message log; an empty list means the run is clean.

    Flags payload kinds outside the allowed set and any payload part whose
    digest equals a raw local sample, an unmasked local mean, a local
    concatenated unfolding, or a local Gram-type matrix.
    """
    forbidden = _forbidden_digests(participants)
    findings = []
    for i, msg in enumerate(log):
        if msg.kind not in PAYLOAD_KINDS:
            findings.append(f"message {i}: disallowed kind {msg.kind}")
        for j, d in enumerate(msg.part_digests):
            if d in forbidden:
                findings.append(f"message {i} ({msg.tag}, {msg.kind}) part {j} leaks local data")
    return findings


def export_log(log: Sequence[Message], path) -> None:
    """Write the message log as JSON lines (digests only, never payload bytes)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for msg in log:
            fh.write(json.dumps(msg.log_record(), sort_keys=True) + "\n")


def make_participants(samples, split: Sequence[int], ids: Sequence[int] | None = None):
    """Partition a sample stack into consecutive blocks of the given sizes."""
    samples = np.asarray(samples)
    if sum(split) != samples.shape[0]:
        raise ValueError(f"split {list(split)} does not sum to {samples.shape[0]} samples")
    if any(m < 1 for m in split):
        raise ValueError("every user needs at least one sample")
    ids = list(ids) if ids is not None else list(range(1, len(split) + 1))
    bounds = np.cumsum([0, *split])
    return [Participant(i, samples[a:b]) for i, a, b in zip(ids, bounds[:-1], bounds[1:])]
