"""Container-claim validation with per-container validation pools.

A container claim is judged against the latest accepted transfer or reset
for its container. Customs agencies may always start a new trusted chain.
Anyone else needs the previous holder to be the claim's ``from`` operator,
and then waits in the container's pool until the other party's claim about
the same handoff shows up. Accepting anything for a container clears its
pool.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Iterator, Mapping, Protocol

from .identity import TrustStore
from .ledger import Block, Ledger, Transaction, TxKind, package, reset, transfer
from .model import (
    AgencyId,
    ContainerClaim,
    ContainerId,
    PackageClaimEnvelope,
    Reason,
    claim_id,
)

DEFAULT_SKEW = timedelta(hours=24)


class Status(str, enum.Enum):
    ACCEPTED = "ACCEPTED"
    PENDING = "PENDING"
    REJECTED = "REJECTED"


class Impossible(str, enum.Enum):
    TIME_REGRESSION = "TIME_REGRESSION"
    FUTURE_TIME = "FUTURE_TIME"
    ZERO_WEIGHT = "ZERO_WEIGHT"
    BAD_LOCATION = "BAD_LOCATION"


@dataclass(frozen=True)
class Outcome:
    status: Status
    transaction: Transaction | None = None
    reason: Reason | None = None
    detail: str = ""

    @property
    def accepted(self) -> bool:
        return self.status is Status.ACCEPTED

    @property
    def pending(self) -> bool:
        return self.status is Status.PENDING

    @property
    def rejected(self) -> bool:
        return self.status is Status.REJECTED

    @property
    def code(self) -> str:
        if self.reason is Reason.IMPOSSIBLE_DATA and self.detail:
            return f"{self.reason.value}:{self.detail}"
        return self.reason.value if self.reason else self.status.value


PENDING = Outcome(Status.PENDING)


def accepted(tx: Transaction) -> Outcome:
    return Outcome(Status.ACCEPTED, transaction=tx)


def rejected(reason: Reason, detail: str = "") -> Outcome:
    return Outcome(Status.REJECTED, reason=reason, detail=detail)


class ChainReader(Protocol):
    def latest_claim(self, container: ContainerId) -> Transaction | None: ...


@dataclass
class ValidationPool:
    """Pending claims for one container, keyed by claim id."""

    container: ContainerId
    pending: dict[str, ContainerClaim] = field(default_factory=dict)

    def add(self, claim: ContainerClaim) -> None:
        if claim.container != self.container:
            raise ValueError(f"claim for {claim.container} pooled under {self.container}")
        self.pending.setdefault(claim_id(claim), claim)

    def clear(self) -> None:
        self.pending.clear()

    def __iter__(self) -> Iterator[ContainerClaim]:
        return iter(self.pending.values())

    def __len__(self) -> int:
        return len(self.pending)

    def __contains__(self, claim) -> bool:
        return claim_id(claim) in self.pending


def match_in_pool(claim: ContainerClaim, pool: ValidationPool) -> ContainerClaim | None:
    """The other party's claim about the same handoff, if one is waiting."""
    other = claim.to if claim.signer == claim.from_ else claim.from_
    for candidate in pool:
        if (candidate.container == claim.container and candidate.from_ == claim.from_
                and candidate.to == claim.to and candidate.signer == other):
            return candidate
    return None


def prefilter_impossible(claim: ContainerClaim, ledger: ChainReader, *,
                         now: datetime | None = None,
                         skew: timedelta = DEFAULT_SKEW) -> Impossible | None:
    if not claim.location.is_valid:
        return Impossible.BAD_LOCATION
    if not claim.is_customs and claim.weight_kg == 0:
        return Impossible.ZERO_WEIGHT
    if now is not None and claim.time > now + skew:
        return Impossible.FUTURE_TIME
    latest = ledger.latest_claim(claim.container)
    if latest is not None and claim.time < latest.time:
        return Impossible.TIME_REGRESSION
    return None


def validate_container_claim(claim: ContainerClaim, pool: ValidationPool, ledger: ChainReader,
                             trust: TrustStore, *, now: datetime | None = None,
                             skew: timedelta = DEFAULT_SKEW,
                             crl_versions: Mapping[str, int] | None = None) -> Outcome:
    """Accept, pool or reject one container claim. Mutates ``pool``."""
    if claim.container != pool.container:
        raise ValueError(f"claim for {claim.container} checked against pool {pool.container}")
    fault = trust.check(claim, crl_versions)
    if fault is not None:
        return rejected(fault)
    impossible = prefilter_impossible(claim, ledger, now=now, skew=skew)
    if impossible is not None:
        return rejected(Reason.IMPOSSIBLE_DATA, impossible.value)
    if isinstance(claim.signer, AgencyId):
        pool.clear()
        return accepted(reset(claim))
    latest = ledger.latest_claim(claim.container)
    if latest is None or latest.to != claim.from_:
        return rejected(Reason.NO_TRUSTED_PREDECESSOR)
    counterpart = match_in_pool(claim, pool)
    if counterpart is not None:
        pool.clear()
        return accepted(transfer(counterpart, claim))
    if claim.involves_epsilon:
        pool.clear()
        return accepted(transfer(claim))
    pool.add(claim)
    return PENDING


def validate_package_claim(envelope: PackageClaimEnvelope, trust: TrustStore, *,
                           crl_versions: Mapping[str, int] | None = None) -> Outcome:
    fault = trust.check(envelope, crl_versions)
    if fault is not None:
        return rejected(fault)
    if envelope.destination_agency not in trust.members:
        return rejected(Reason.UNKNOWN_DESTINATION_AGENCY)
    return accepted(package(envelope))


class LedgerView:
    """A ledger plus transactions accepted but not yet committed."""

    def __init__(self, ledger: Ledger):
        self.ledger = ledger
        self.tentative: dict[ContainerId, Transaction] = {}

    def latest_claim(self, container: ContainerId) -> Transaction | None:
        tx = self.tentative.get(container)
        return tx if tx is not None else self.ledger.latest_claim(container)

    def record(self, tx: Transaction) -> None:
        if tx.kind is not TxKind.PACKAGE:
            self.tentative[tx.container] = tx


class Validator:
    """Stateful front end: one pool per container, accepted transactions queued.

    Per-container validation is strictly serial. Distinct containers never
    share state, so callers may shard containers across workers.
    """

    def __init__(self, ledger: Ledger, trust: TrustStore, *, skew: timedelta = DEFAULT_SKEW):
        self.ledger = ledger
        self.trust = trust
        self.skew = skew
        self.view = LedgerView(ledger)
        self.pools: dict[ContainerId, ValidationPool] = {}
        self.accepted: list[Transaction] = []

    def pool(self, container: ContainerId) -> ValidationPool:
        pool = self.pools.get(container)
        if pool is None:
            pool = self.pools[container] = ValidationPool(container)
        return pool

    def submit(self, claim, *, now: datetime | None = None,
               crl_versions: Mapping[str, int] | None = None) -> Outcome:
        if isinstance(claim, PackageClaimEnvelope):
            outcome = validate_package_claim(claim, self.trust, crl_versions=crl_versions)
        else:
            outcome = validate_container_claim(
                claim, self.pool(claim.container), self.view, self.trust,
                now=now, skew=self.skew, crl_versions=crl_versions)
        if outcome.accepted:
            self.view.record(outcome.transaction)
            self.accepted.append(outcome.transaction)
        return outcome

    def drain(self) -> list[Transaction]:
        """Hand over accepted transactions; the caller must commit them next."""
        out, self.accepted = self.accepted, []
        self.view.tentative.clear()
        return out

    def pool_residue(self) -> list[ContainerClaim]:
        return [c for pool in self.pools.values() for c in pool]


# --------------------------------------------------------------------------
# Replaying committed transactions
# --------------------------------------------------------------------------

def check_transaction(tx: Transaction, view: ChainReader, trust: TrustStore, *,
                      now: datetime | None = None, skew: timedelta = DEFAULT_SKEW,
                      crl_versions: Mapping[str, int] | None = None) -> str | None:
    """Re-run validation for a committed (or proposed) transaction.

    Returns ``None`` if feeding its claims through a fresh pool yields
    exactly this transaction, otherwise a description of the divergence.
    """
    if tx.kind is TxKind.PACKAGE:
        if len(tx.claims) != 1 or not isinstance(tx.claims[0], PackageClaimEnvelope):
            return "PACKAGE transaction must hold exactly one envelope"
        out = validate_package_claim(tx.claims[0], trust, crl_versions=crl_versions)
        return None if out.accepted else f"package claim rejected: {out.code}"
    if not tx.claims or not all(isinstance(c, ContainerClaim) for c in tx.claims):
        return f"{tx.kind.value} transaction must hold container claims"
    if any(c.container != tx.container for c in tx.claims):
        return "claims disagree with the transaction's container"
    pool = ValidationPool(tx.container)
    outcome = None
    for i, claim in enumerate(tx.claims):
        outcome = validate_container_claim(claim, pool, view, trust, now=now, skew=skew,
                                           crl_versions=crl_versions)
        last = i == len(tx.claims) - 1
        if not last and not outcome.pending:
            return f"claim {i} should wait for its counterpart but was {outcome.code}"
    if not outcome.accepted:
        if outcome.pending:
            return f"{tx.kind.value} lacks the counterpart signature"
        return f"claim rejected on replay: {outcome.code}"
    got = outcome.transaction
    if got.kind is not tx.kind or got.claim_ids != tx.claim_ids:
        return f"replay produced {got.kind.value} {got.claim_ids}, ledger holds {tx.kind.value}"
    return None


def check_block(block: Block, ledger: Ledger, trust: TrustStore, *,
                skew: timedelta = DEFAULT_SKEW) -> list[str]:
    """Problems with ``block`` as a successor of ``ledger``'s tip (empty when valid)."""
    problems = []
    view = LedgerView(ledger)
    seen: set[ContainerId] = set()
    for tx in block.transactions:
        if any(ledger.is_committed(c) for c in tx.claim_ids):
            problems.append("transaction repeats an already committed claim")
            continue
        if tx.container is not None:
            if tx.container in seen:
                problems.append(f"container {tx.container} changes twice in one block")
            seen.add(tx.container)
        err = check_transaction(tx, view, trust, now=block.time, skew=skew,
                                crl_versions=block.crl_versions)
        if err:
            problems.append(err)
        else:
            view.record(tx)
    return problems


@dataclass(frozen=True)
class Finding:
    height: int
    message: str

    def __str__(self) -> str:
        return f"block {self.height}: {self.message}"


def chain_invariant_findings(ledger: Ledger) -> list[Finding]:
    """Structural invariants every committed ledger must satisfy."""
    findings = []
    prev_hash = None
    for block in ledger.blocks:
        if block.compute_hash() != block.block_hash:
            findings.append(Finding(block.height, "block hash does not match contents"))
        if prev_hash is not None and block.prev_hash != prev_hash:
            findings.append(Finding(block.height, "prev_hash breaks the chain"))
        prev_hash = block.block_hash
        for tx in block.transactions:
            msg = _shape_problem(tx)
            if msg:
                findings.append(Finding(block.height, msg))
    for container in ledger.containers():
        history = ledger.container_history(container)
        if history and history[0].kind is not TxKind.RESET:
            findings.append(Finding(history[0].accepted_at,
                                    f"{container}: chain does not start with a customs reset"))
        for pred, succ in zip(history, history[1:]):
            if succ.kind is TxKind.TRANSFER and pred.to != succ.from_:
                findings.append(Finding(succ.accepted_at,
                                        f"{container}: {succ.from_} did not hold the container"))
    return findings


def _shape_problem(tx: Transaction) -> str | None:
    if tx.kind is TxKind.PACKAGE:
        ok = len(tx.claims) == 1 and isinstance(tx.claims[0], PackageClaimEnvelope)
        return None if ok else "malformed PACKAGE transaction"
    if not all(isinstance(c, ContainerClaim) and c.container == tx.container for c in tx.claims):
        return f"{tx.kind.value} claims do not match the transaction container"
    if tx.kind is TxKind.RESET:
        if len(tx.claims) != 1 or not tx.claims[0].is_customs:
            return "RESET must be a single customs-signed claim"
        return None
    first = tx.claims[0]
    if any((c.from_, c.to) != (first.from_, first.to) for c in tx.claims):
        return "TRANSFER claims disagree on from/to"
    signers = {c.signer for c in tx.claims}
    if first.involves_epsilon:
        party = first.to if first.from_.is_epsilon else first.from_
        if len(tx.claims) != 1 or signers != {party}:
            return "epsilon TRANSFER must carry exactly the participant's signature"
    elif len(tx.claims) != 2 or signers != {first.from_, first.to}:
        return f"TRANSFER {first.from_}->{first.to} lacks one of the two signatures"
    return None


def replay_ledger(ledger: Ledger, trust: TrustStore, *,
                  skew: timedelta = DEFAULT_SKEW) -> list[Finding]:
    """Re-validate every committed transaction from genesis with fresh pools."""
    findings = []
    fresh = Ledger()
    for block in ledger.blocks[1:]:
        for problem in check_block(block, fresh, trust, skew=skew):
            findings.append(Finding(block.height, problem))
        fresh.append_block(block)
    return findings


def accepted_claim_sets(txs: Iterable[Transaction]) -> set[tuple[str, ...]]:
    return {tx.claim_ids for tx in txs}
