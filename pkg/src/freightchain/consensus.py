"""Deterministic ordering of claims among customs nodes.

Only customs agencies take part in ordering. Time is a tick counter and
rounds have a fixed length, so every node knows the current round and its
proposer (``members[round % len(members)]``) without talking to anyone.

A round has three phases. The proposer broadcasts a block; every node
prevotes for it if the block passes its own validation against its own
replica (or prevotes nil); a node that sees more than 2/3 prevotes for a
block locks on it and precommits; more than 2/3 precommits commit the
block. A node locked on a block only prevotes for that block until it sees
a newer quorum of prevotes, and proposers re-propose the newest block they
saw such a quorum for. That keeps two honest nodes from ever committing
different blocks at one height when messages are dropped.

Everything runs in one thread. Nodes only react to ``on_tick`` and
``on_message`` calls and return the messages they want sent; the
:class:`Network` decides latency and loss from a seeded RNG.

Trace records are dicts with the keys ``tick``, ``event`` (send, drop,
deliver, commit), ``from``, ``to``, ``kind`` and ``digest``; commit records
also carry ``height``.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Sequence

from .identity import RevocationList, TrustStore
from .ledger import Block, Ledger, Transaction, make_block
from .model import (
    AgencyId,
    ContainerClaim,
    Party,
    claim_id,
    party_text,
)
from .validation import DEFAULT_SKEW, Validator, check_block


class ConsensusError(Exception):
    pass


class NotProposer(ConsensusError):
    pass


class RoundAbort(ConsensusError):
    pass


def node_id(party: Party) -> str:
    return party_text(party)


def quorum(n: int) -> int:
    """Smallest vote count that is strictly more than 2/3 of ``n``."""
    return 2 * n // 3 + 1


# --------------------------------------------------------------------------
# Messages
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClaimMsg:
    claim: Any
    kind = "claim"

    @property
    def digest(self) -> str:
        return claim_id(self.claim)


@dataclass(frozen=True)
class Proposal:
    round: int
    proposer: str
    block: Block
    valid_round: int = -1
    kind = "proposal"

    @property
    def height(self) -> int:
        return self.block.height

    @property
    def transactions(self) -> tuple[Transaction, ...]:
        return self.block.transactions

    @property
    def proposal_hash(self) -> str:
        text = f"{self.round}|{self.proposer}|{self.valid_round}|{self.block.block_hash}"
        return hashlib.sha256(text.encode()).hexdigest()

    digest = proposal_hash


@dataclass(frozen=True)
class Vote:
    phase: str  # "prevote" or "precommit"
    round: int
    height: int
    block_hash: str | None
    voter: str

    @property
    def kind(self) -> str:
        return self.phase

    @property
    def digest(self) -> str:
        return self.block_hash or "nil"


@dataclass(frozen=True)
class Status:
    height: int
    tip_hash: str
    kind = "status"

    @property
    def digest(self) -> str:
        return self.tip_hash


@dataclass(frozen=True)
class SyncRequest:
    from_height: int
    kind = "sync_request"

    @property
    def digest(self) -> str:
        return str(self.from_height)


@dataclass(frozen=True)
class SyncResponse:
    blocks: tuple[Block, ...]
    certs: tuple[frozenset, ...]
    kind = "sync_response"

    @property
    def digest(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else "none"


@dataclass(frozen=True)
class Committed:
    claim_ids: tuple[str, ...]
    kind = "committed"

    @property
    def digest(self) -> str:
        return hashlib.sha256("".join(self.claim_ids).encode()).hexdigest()


@dataclass(frozen=True)
class CrlUpdate:
    crl: RevocationList
    kind = "crl"

    @property
    def digest(self) -> str:
        return f"{self.crl.issuer.value}:{self.crl.version}"


class Send(NamedTuple):
    dst: str | tuple[str, ...]
    msg: Any
    control: bool = False


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """During ticks ``[start, end)`` nothing crosses the boundary of ``group``."""

    start: int
    end: int
    group: frozenset

    def cuts(self, tick: int, src: str, dst: str) -> bool:
        return self.start <= tick < self.end and ((src in self.group) != (dst in self.group))


@dataclass(frozen=True)
class NetworkConfig:
    seed: int = 0
    latency: tuple[int, int] = (1, 2)
    drop_rate: float = 0.0
    partitions: tuple[Partition, ...] = ()
    link_drop: Mapping[tuple[str, str], float] = field(default_factory=dict)
    round_ticks: int | None = None
    max_rounds: int = 2000
    retry_ticks: int | None = None
    max_retries: int = 12
    record_trace: bool = True

    def __post_init__(self):
        lo, hi = self.latency
        if not (1 <= lo <= hi):
            raise ValueError("latency must satisfy 1 <= min <= max")
        if not (0.0 <= self.drop_rate < 1.0):
            raise ValueError("drop_rate must be in [0, 1)")
        if self.round_ticks is not None and self.round_ticks < 3 * (hi + 1):
            raise ValueError(f"round_ticks must be at least {3 * (hi + 1)}")

    @property
    def phase_ticks(self) -> int:
        return self.latency[1] + 1

    @property
    def ticks_per_round(self) -> int:
        return self.round_ticks or 3 * self.phase_ticks

    @property
    def retry_interval(self) -> int:
        return self.retry_ticks or 2 * self.ticks_per_round


class Network:
    """Seeded message delivery with latency, loss and partitions.

    Control messages (revocation lists) are never dropped and always take
    the minimum latency; they are delivered before data messages due in the
    same tick.
    """

    def __init__(self, config: NetworkConfig, trace: list | None = None):
        self.config = config
        self.rng = random.Random(config.seed)
        self.trace = trace if trace is not None else []
        self._queue: list = []
        self._seq = 0

    def _record(self, tick, event, src, dst, msg, **extra):
        if self.config.record_trace:
            self.trace.append({"tick": tick, "event": event, "from": src, "to": dst,
                               "kind": msg.kind, "digest": msg.digest, **extra})

    def send(self, tick: int, src: str, dst: str, msg, *, control: bool = False) -> int | None:
        lo, hi = self.config.latency
        if control:
            arrive, dropped = tick + lo, False
        else:
            arrive = tick + self.rng.randint(lo, hi)
            rate = self.config.link_drop.get((src, dst), self.config.drop_rate)
            dropped = (rate > 0 and self.rng.random() < rate) or \
                any(p.cuts(tick, src, dst) for p in self.config.partitions)
        if dropped:
            self._record(tick, "drop", src, dst, msg)
            return None
        self._record(tick, "send", src, dst, msg)
        heapq.heappush(self._queue, (arrive, 0 if control else 1, self._seq, src, dst, msg))
        self._seq += 1
        return arrive

    def broadcast(self, tick: int, src: str, dsts: Iterable[str], msg, *,
                  control: bool = False) -> list[tuple[str, int | None]]:
        return [(dst, self.send(tick, src, dst, msg, control=control)) for dst in dsts]

    def due(self, tick: int) -> list[tuple[str, str, Any]]:
        out = []
        while self._queue and self._queue[0][0] <= tick:
            _, _, _, src, dst, msg = heapq.heappop(self._queue)
            self._record(tick, "deliver", src, dst, msg)
            out.append((src, dst, msg))
        return out

    @property
    def idle(self) -> bool:
        return not self._queue


# --------------------------------------------------------------------------
# Nodes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Clock:
    epoch: datetime = datetime(2018, 3, 1, tzinfo=timezone.utc)
    tick_seconds: int = 60

    def at(self, tick: int) -> datetime:
        return self.epoch + timedelta(seconds=tick * self.tick_seconds)


class Submitter:
    """Re-sends own claims to every customs node until told they committed."""

    def __init__(self, ident: str, customs: Sequence[str], config: NetworkConfig):
        self.id = ident
        self.customs = tuple(customs)
        self.config = config
        self.outstanding: dict[str, list] = {}  # cid -> [claim, retries left, next tick]
        self.committed: set[str] = set()
        self.given_up: dict[str, Any] = {}

    def track(self, tick: int, claim) -> list[Send]:
        cid = claim_id(claim)
        self.outstanding[cid] = [claim, self.config.max_retries, tick + self.config.retry_interval]
        return [Send(tuple(c for c in self.customs if c != self.id), ClaimMsg(claim))]

    def retries_due(self, tick: int) -> list[Send]:
        out = []
        for cid in list(self.outstanding):
            claim, left, due = self.outstanding[cid]
            if tick < due:
                continue
            if left <= 0:
                self.given_up[cid] = claim
                del self.outstanding[cid]
                continue
            self.outstanding[cid] = [claim, left - 1, tick + self.config.retry_interval]
            out.append(Send(tuple(c for c in self.customs if c != self.id), ClaimMsg(claim)))
        return out

    def mark_committed(self, ids: Iterable[str]) -> None:
        for cid in ids:
            self.committed.add(cid)
            self.outstanding.pop(cid, None)

    @property
    def busy(self) -> bool:
        return bool(self.outstanding)


class OperatorNode(Submitter):
    def __init__(self, operator, customs: Sequence[str], config: NetworkConfig,
                 certificate=None):
        super().__init__(node_id(operator), customs, config)
        self.operator = operator
        self.certificate = certificate
        self.revoked = False

    def on_tick(self, tick: int) -> list[Send]:
        return self.retries_due(tick)

    def on_message(self, tick: int, src: str, msg) -> list[Send]:
        if isinstance(msg, Committed):
            self.mark_committed(msg.claim_ids)
        elif isinstance(msg, CrlUpdate):
            cert = self.certificate
            if cert is not None and cert.issuer == msg.crl.issuer and cert.serial in msg.crl:
                self.revoked = True
        return []


class CustomsNode(Submitter):
    """A customs agency's replica: mempool, validation, voting and commit."""

    def __init__(self, agency: AgencyId, members: Sequence[AgencyId], trust: TrustStore,
                 config: NetworkConfig, *, clock: Clock = Clock(),
                 skew: timedelta = DEFAULT_SKEW, operators: Sequence[str] = ()):
        self.members = [node_id(m) for m in sorted(members)]
        super().__init__(node_id(agency), self.members, config)
        self.agency = agency
        self.trust = trust
        self.clock = clock
        self.skew = skew
        self.ledger = Ledger()
        self.certs: dict[int, frozenset] = {}
        self.mempool: dict[str, Any] = {}
        self.rejections: dict[str, tuple[str, Any]] = {}
        self.operators = tuple(operators)
        self.q = quorum(len(self.members))
        self._reset_height()
        self.round = -1
        self.step = "idle"
        self.last_sync_request = -10**9

    # consensus state per height -------------------------------------------

    def _reset_height(self) -> None:
        self.locked: tuple[Block, int] | None = None
        self.valid: tuple[Block, int] | None = None
        self.proposals: dict[int, Proposal] = {}
        self.blocks: dict[str, Block] = {}
        self.prevotes: dict[int, dict[str | None, set]] = defaultdict(lambda: defaultdict(set))
        self.precommits: dict[int, dict[str | None, set]] = defaultdict(lambda: defaultdict(set))
        self.future: list[tuple[str, Any]] = []
        self._verdicts: dict[str, bool] = {}

    @property
    def next_height(self) -> int:
        return self.ledger.height + 1

    def proposer_for(self, rnd: int) -> str:
        return self.members[rnd % len(self.members)]

    def others(self) -> tuple[str, ...]:
        return tuple(m for m in self.members if m != self.id)

    # proposal building and checking ---------------------------------------

    def build_block(self, tick: int) -> Block | None:
        """Run validation over the mempool; at most one transaction per container."""
        now = self.clock.at(tick)
        versions = self.trust.crl_versions()
        validator = Validator(self.ledger, self.trust, skew=self.skew)
        touched = set()
        txs = []

        def order(item):
            cid, claim = item
            t = claim.time if isinstance(claim, ContainerClaim) else self.clock.epoch
            return (t, cid)

        for cid, claim in sorted(self.mempool.items(), key=order):
            if isinstance(claim, ContainerClaim) and claim.container in touched:
                continue
            out = validator.submit(claim, now=now, crl_versions=versions)
            if out.accepted:
                txs.append(out.transaction)
                if out.transaction.container is not None:
                    touched.add(out.transaction.container)
            elif out.rejected:
                self.rejections.setdefault(cid, (out.code, claim))
                del self.mempool[cid]
        if not txs:
            return None
        return make_block(self.ledger.tip, txs, max(now, self.ledger.tip.time), versions)

    def block_problems(self, block: Block, tick: int | None = None) -> list[str]:
        if block.height != self.next_height:
            return [f"height {block.height}, expected {self.next_height}"]
        if block.prev_hash != self.ledger.tip.block_hash:
            return ["does not extend our tip"]
        if block.time < self.ledger.tip.time:
            return ["block time goes backwards"]
        if tick is not None and block.time > self.clock.at(tick):
            return ["block time is in the future"]
        mine = self.trust.crl_versions()
        if any(v > mine.get(k, 0) for k, v in block.crl_versions.items()):
            return ["block uses revocation state we have not seen"]
        if [t.tx_id for t in block.transactions] != sorted(t.tx_id for t in block.transactions):
            return ["transactions out of order"]
        return check_block(block, self.ledger, self.trust, skew=self.skew)

    def stale_revocations(self, block: Block) -> bool:
        """True when we know of a CRL newer than the ones ``block`` was built under."""
        mine = self.trust.crl_versions()
        return any(v > block.crl_versions.get(k, 0) for k, v in mine.items())

    def accepts(self, block: Block, tick: int | None) -> bool:
        verdict = self._verdicts.get(block.block_hash)
        if verdict is None:
            verdict = not self.block_problems(block, tick)
            self._verdicts[block.block_hash] = verdict
        return verdict

    def propose(self, rnd: int, tick: int) -> Proposal | None:
        if self.proposer_for(rnd) != self.id:
            raise NotProposer(f"{self.id} is not the proposer of round {rnd}")
        if self.valid is not None:
            block, vr = self.valid
            return Proposal(rnd, self.id, block, vr)
        block = self.build_block(tick)
        return Proposal(rnd, self.id, block) if block is not None else None

    # commit ------------------------------------------------------------------

    def apply_commit(self, block: Block, cert: frozenset, tick: int,
                     trace: list | None = None, *, notify: bool = True) -> list[Send]:
        self.ledger.append_block(block)
        self.certs[block.height] = frozenset(cert)
        if trace is not None:
            trace.append({"tick": tick, "event": "commit", "from": self.id, "to": self.id,
                          "kind": "block", "digest": block.block_hash, "height": block.height})
        out = []
        by_signer: dict[str, list[str]] = defaultdict(list)
        for tx in block.transactions:
            for claim, cid in zip(tx.claims, tx.claim_ids):
                self.mempool.pop(cid, None)
                by_signer[node_id(claim.signer)].append(cid)
        self.mark_committed(by_signer.get(self.id, ()))
        if notify and self.members[block.height % len(self.members)] == self.id:
            for dst, ids in sorted(by_signer.items()):
                if dst != self.id:
                    out.append(Send(dst, Committed(tuple(ids))))
        future = self.future
        self._reset_height()
        if self.step in ("prevote", "precommit", "propose"):
            self.step = "done"
        for src, msg in future:
            out += self.on_message(tick, src, msg)
        return out

    # event handlers -------------------------------------------------------

    def on_tick(self, tick: int) -> list[Send]:
        R, P = self.config.ticks_per_round, self.config.phase_ticks
        rnd, offset = divmod(tick, R)
        out = self.retries_due(tick)
        if offset == 0:
            self.round, self.step = rnd, "propose"
            if self.proposer_for(rnd) == self.id:
                proposal = self.propose(rnd, tick)
                if proposal is None:
                    out.append(Send(self.others(), Status(self.ledger.height,
                                                          self.ledger.tip.block_hash)))
                else:
                    self.last_proposal_tick = tick
                    out.append(Send(self.others(), proposal))
                    out += self._on_proposal(tick, proposal)
        elif offset == P and self.step == "propose" and rnd == self.round:
            out += self._prevote(tick, None)
        elif offset == 2 * P and self.step == "prevote" and rnd == self.round:
            out += self._precommit(tick, None)
        return out

    def on_message(self, tick: int, src: str, msg) -> list[Send]:
        if isinstance(msg, ClaimMsg):
            return self._on_claim(tick, src, msg.claim)
        if isinstance(msg, CrlUpdate):
            self.trust.apply_crl(msg.crl)
            return []
        if isinstance(msg, Committed):
            self.mark_committed(msg.claim_ids)
            return []
        if isinstance(msg, SyncRequest):
            return self._on_sync_request(src, msg)
        if isinstance(msg, SyncResponse):
            return self._on_sync_response(tick, src, msg)
        if isinstance(msg, Status):
            return self._maybe_sync(tick, src, msg.height + 1)
        height = msg.height
        if height < self.next_height:
            if isinstance(msg, Proposal):
                return [Send(src, Status(self.ledger.height, self.ledger.tip.block_hash))]
            return []
        if height > self.next_height:
            if height == self.next_height + 1:
                self.future.append((src, msg))
            return self._maybe_sync(tick, src, height)
        if isinstance(msg, Proposal):
            return self._on_proposal(tick, msg)
        if isinstance(msg, Vote):
            return self._on_vote(tick, msg)
        return []

    def _on_claim(self, tick: int, src: str, claim) -> list[Send]:
        cid = claim_id(claim)
        if self.ledger.is_committed(cid):
            return [Send(src, Committed((cid,)))] if src != self.id else []
        if cid in self.mempool:
            return []
        fault = self.trust.check(claim)
        if fault is not None:
            self.rejections.setdefault(cid, (fault.value, claim))
            return []
        self.mempool[cid] = claim
        return []

    def submit_own(self, tick: int, claim) -> list[Send]:
        """A claim this agency signs itself (chain resets)."""
        self._on_claim(tick, self.id, claim)
        return self.track(tick, claim)

    def _on_proposal(self, tick: int, prop: Proposal) -> list[Send]:
        if prop.proposer != self.proposer_for(prop.round):
            return []
        self.proposals.setdefault(prop.round, prop)
        self.blocks[prop.block.block_hash] = prop.block
        out = []
        if prop.round == self.round and self.step == "propose":
            block, h = prop.block, prop.block.block_hash
            seen = any(b is not None and b[0].block_hash == h for b in (self.locked, self.valid))
            ok = self.accepts(block, tick) and (seen or not self.stale_revocations(block))
            if self.locked is None or self.locked[0].block_hash == h:
                vote = h if ok else None
            else:
                vr = prop.valid_round
                polka = 0 <= vr < prop.round and len(self.prevotes[vr].get(h, ())) >= self.q
                vote = h if ok and polka and self.locked[1] <= vr else None
            out += self._prevote(tick, vote)
        return out + self._check_quorums(tick)

    def _prevote(self, tick: int, block_hash: str | None) -> list[Send]:
        self.step = "prevote"
        vote = Vote("prevote", self.round, self.next_height, block_hash, self.id)
        self.prevotes[self.round][block_hash].add(self.id)
        return [Send(self.others(), vote)] + self._check_quorums(tick)

    def _precommit(self, tick: int, block_hash: str | None) -> list[Send]:
        self.step = "precommit"
        vote = Vote("precommit", self.round, self.next_height, block_hash, self.id)
        self.precommits[self.round][block_hash].add(self.id)
        return [Send(self.others(), vote)] + self._check_quorums(tick)

    def _on_vote(self, tick: int, vote: Vote) -> list[Send]:
        if vote.voter not in self.members:
            return []
        tally = self.prevotes if vote.phase == "prevote" else self.precommits
        tally[vote.round][vote.block_hash].add(vote.voter)
        return self._check_quorums(tick)

    def _check_quorums(self, tick: int) -> list[Send]:
        # decision: any round's precommit quorum commits
        for rnd, votes in self.precommits.items():
            for h, voters in votes.items():
                if h is not None and len(voters) >= self.q:
                    block = self.blocks.get(h)
                    if block is None:
                        return self._maybe_sync(tick, sorted(voters)[0], self.next_height + 1,
                                                force=True)
                    if not self.accepts(block, None):
                        return []
                    return self.apply_commit(block, frozenset(voters), tick, self.trace)
        out = []
        for rnd, votes in self.prevotes.items():
            for h, voters in votes.items():
                if h is None or len(voters) < self.q or h not in self.blocks:
                    continue
                if self.valid is None or self.valid[1] < rnd:
                    if self.accepts(self.blocks[h], None):
                        self.valid = (self.blocks[h], rnd)
                if rnd == self.round and self.step == "prevote" and self.accepts(self.blocks[h], None):
                    self.locked = (self.blocks[h], rnd)
                    out += self._precommit(tick, h)
                    return out
        nil = self.prevotes[self.round].get(None, ())
        if self.step == "prevote" and len(nil) >= self.q:
            out += self._precommit(tick, None)
        return out

    # catch-up ----------------------------------------------------------------

    def _maybe_sync(self, tick: int, src: str, their_next: int, force: bool = False) -> list[Send]:
        if their_next <= self.next_height and not force:
            return []
        if not force and tick - self.last_sync_request < self.config.phase_ticks:
            return []
        self.last_sync_request = tick
        return [Send(src, SyncRequest(self.next_height))]

    def _on_sync_request(self, src: str, req: SyncRequest) -> list[Send]:
        heights = range(req.from_height, min(self.ledger.height, req.from_height + 63) + 1)
        blocks = tuple(self.ledger.blocks[h] for h in heights)
        if not blocks:
            return []
        return [Send(src, SyncResponse(blocks, tuple(self.certs.get(h, frozenset())
                                                     for h in heights)))]

    def _on_sync_response(self, tick: int, src: str, resp: SyncResponse) -> list[Send]:
        out = []
        for block, cert in zip(resp.blocks, resp.certs):
            if block.height != self.next_height:
                continue
            if len(cert) < self.q or not set(cert) <= set(self.members):
                break
            if self.block_problems(block):
                break
            out += self.apply_commit(block, cert, tick, self.trace, notify=False)
        return out

    trace: list | None = None

    @property
    def busy(self) -> bool:
        return bool(self.outstanding) or self.locked is not None or self.valid is not None


# --------------------------------------------------------------------------
# Driving a whole network
# --------------------------------------------------------------------------

def propose_block(node: CustomsNode, rnd: int, tick: int | None = None) -> Proposal | None:
    """The round's proposal from ``node``, or None when it has nothing to propose."""
    if tick is None:
        tick = rnd * node.config.ticks_per_round
    return node.propose(rnd, tick)


def vote_and_commit(nodes: Sequence[CustomsNode], proposal: Proposal,
                    tick: int | None = None) -> Block:
    """One lock-step voting round without a network: commit on > 2/3 yes votes."""
    if not nodes:
        raise RoundAbort("no voters")
    members = nodes[0].members
    yes = frozenset(n.id for n in nodes if n.id in members and
                    not n.block_problems(proposal.block, tick) and
                    not n.stale_revocations(proposal.block))
    if len(yes) < quorum(len(members)):
        raise RoundAbort(f"{len(yes)} of {len(members)} voted yes")
    for n in nodes:
        n.apply_commit(proposal.block, yes, tick or 0, n.trace, notify=False)
    return proposal.block


def broadcast_claim(network: Network, tick: int, origin: str, customs: Iterable[str],
                    claim) -> list[tuple[str, int | None]]:
    """Send ``claim`` to every customs node; returns ``(node, arrival tick or None)``."""
    return network.broadcast(tick, origin, [c for c in customs if c != origin], ClaimMsg(claim))


@dataclass
class NetworkRun:
    nodes: dict[str, CustomsNode]
    operators: dict[str, OperatorNode]
    trace: list
    ticks: int
    rounds: int

    @property
    def ledgers(self) -> dict[str, Ledger]:
        return {k: n.ledger for k, n in self.nodes.items()}

    def converged(self) -> bool:
        dumps = {n.ledger.dumps() for n in self.nodes.values()}
        return len(dumps) == 1


ScheduledAction = Callable[[int], Iterable[tuple[str, Send]]]


def run_network(nodes: Sequence[CustomsNode], config: NetworkConfig,
                schedule: Sequence[tuple[int, ScheduledAction]] = (),
                operators: Sequence[OperatorNode] = ()) -> NetworkRun:
    """Run until everything scheduled has settled or ``config.max_rounds`` pass.

    ``schedule`` holds ``(tick, action)`` pairs; an action is called with the
    tick and returns ``(sender id, Send)`` pairs to put on the network.
    """
    trace: list = []
    network = Network(config, trace)
    by_id: dict[str, Any] = {n.id: n for n in nodes}
    by_id.update({o.id: o for o in operators})
    customs = sorted(n.id for n in nodes)
    for n in nodes:
        n.trace = trace if config.record_trace else None
    events = sorted(enumerate(schedule), key=lambda e: (e[1][0], e[0]))
    pending = [action for _, (_, action) in events]
    pending_ticks = [t for _, (t, _) in events]
    R = config.ticks_per_round
    idle_rounds = 0
    tick = 0
    next_event = 0
    last_heights = None

    def dispatch(sender: str, sends: Iterable[Send]) -> None:
        for s in sends:
            dsts = (s.dst,) if isinstance(s.dst, str) else s.dst
            for dst in dsts:
                if dst in by_id:
                    network.send(tick, sender, dst, s.msg, control=s.control)

    while True:
        rnd, offset = divmod(tick, R)
        if offset == 0 and tick > 0:
            heights = tuple(n.ledger.height for n in nodes)
            idle_rounds = idle_rounds + 1 if heights == last_heights else 0
            last_heights = heights
            settled = (next_event >= len(pending) and network.idle
                       and not any(x.busy for x in by_id.values())
                       and len(set(heights)) == 1 and idle_rounds >= len(customs))
            if settled or rnd >= config.max_rounds:
                break
        for src, dst, msg in network.due(tick):
            dispatch(dst, by_id[dst].on_message(tick, src, msg))
        while next_event < len(pending) and pending_ticks[next_event] <= tick:
            for sender, send in pending[next_event](tick):
                dispatch(sender, [send])
            next_event += 1
        for ident in customs:
            dispatch(ident, by_id[ident].on_tick(tick))
        for op in operators:
            dispatch(op.id, op.on_tick(tick))
        tick += 1
    return NetworkRun({n.id: n for n in nodes}, {o.id: o for o in operators}, trace,
                      tick, tick // R)


def trace_lines(trace: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in trace)


def conflicting_commits(trace: Iterable[dict]) -> dict[int, set[str]]:
    """Heights at which different nodes committed different blocks (should be empty)."""
    seen: dict[int, set[str]] = defaultdict(set)
    for rec in trace:
        if rec["event"] == "commit":
            seen[rec["height"]].add(rec["digest"])
    return {h: s for h, s in seen.items() if len(s) > 1}
