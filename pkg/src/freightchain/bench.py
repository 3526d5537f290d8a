"""Single-node validate-and-commit throughput on pre-signed synthetic claims."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from .identity import ED25519, CertificateAuthority, Role, TrustStore, generate_keypair, sign_claim
from .ledger import Ledger, make_block
from .model import EPSILON, AgencyId, ContainerClaim, GeoLocation, OperatorId, parse_shipment_id
from .scenario import derive_seed, synthetic_container_ids
from .validation import Validator

EPOCH = datetime(2018, 3, 1, tzinfo=timezone.utc)
SHIPMENT = parse_shipment_id("9074729-2018-03-01")
HERE = GeoLocation(51.95, 4.14)


@dataclass
class BenchWorkload:
    trust: TrustStore
    ledger: Ledger  # already holds the resets that start every chain
    rounds: list[list[list[ContainerClaim]]]  # rounds -> containers -> claims

    @property
    def claim_count(self) -> int:
        return sum(len(c) for r in self.rounds for c in r)


@dataclass
class BenchResult:
    claims: int
    transactions: int
    seconds: float
    threads: int
    ledger: Ledger

    @property
    def rate(self) -> float:
        return self.claims / max(self.seconds, 1e-9)

    def summary(self) -> str:
        return (f"{self.claims} claims, {self.transactions} transactions committed in "
                f"{self.seconds:.3f} s on {self.threads} thread(s): {self.rate:,.0f} claims/s")


def prepare(count: int, *, seed: int = 0, containers: int | None = None,
            operators: int = 16) -> BenchWorkload:
    """``count`` signed claims: handoff pairs, plus one hole exit when ``count`` is odd."""
    if count < 1:
        raise ValueError("count must be at least 1")
    pairs, single = divmod(count, 2)
    n_containers = containers or max(1, min(pairs, 5000))
    agency = AgencyId("BENCH")
    ca = CertificateAuthority(agency, generate_keypair(ED25519, derive_seed(seed, "bench-ca")))
    ops = [OperatorId(f"B{i:03d}") for i in range(operators)]
    keys = {o: generate_keypair(ED25519, derive_seed(seed, "bench", o.value)) for o in ops}
    certs = [ca.self_certificate] + [ca.issue(o, Role.OPERATOR, keys[o].public_key) for o in ops]
    trust = TrustStore(certs, [agency])

    ids = synthetic_container_ids(n_containers + single, owner="BNCU")
    holder = {c: ops[i % operators] for i, c in enumerate(ids)}
    resets = [sign_claim(ContainerClaim(c, SHIPMENT, EPSILON, holder[c], EPOCH, HERE, 1000,
                                        agency), ca.keys) for c in ids]
    validator = Validator(Ledger(), trust)
    for claim in resets:
        validator.submit(claim)
    ledger = Ledger()
    ledger.append_block(make_block(ledger.tip, validator.drain(), EPOCH))

    rounds: list[list[list[ContainerClaim]]] = []
    left = pairs
    step = 0
    while left:
        step += 1
        when = EPOCH + timedelta(minutes=step)
        batch = []
        for c in ids[:n_containers][:left]:
            x = holder[c]
            y = ops[(ops.index(x) + 1 + step) % operators]
            if y == x:
                y = ops[(ops.index(x) + 1) % operators]
            pair = [sign_claim(ContainerClaim(c, SHIPMENT, x, y, when, HERE, 1000, s), keys[s])
                    for s in (x, y)]
            batch.append(pair)
            holder[c] = y
        left -= len(batch)
        rounds.append(batch)
    if single:
        c = ids[-1]
        x = holder[c]
        exit_claim = sign_claim(ContainerClaim(c, SHIPMENT, x, EPSILON,
                                               EPOCH + timedelta(minutes=1), HERE, 1000, x),
                                keys[x])
        if rounds:
            rounds[0].append([exit_claim])
        else:
            rounds.append([[exit_claim]])
    return BenchWorkload(trust, ledger, rounds)


def _validate_shard(ledger: Ledger, trust: TrustStore, shard: list[list[ContainerClaim]]):
    validator = Validator(ledger, trust)
    for claims in shard:
        for claim in claims:
            validator.submit(claim)
    return validator.drain()


def run(workload: BenchWorkload, threads: int = 1) -> BenchResult:
    """Validate every round's claims, then commit the round as one block."""
    threads = max(1, threads)
    ledger = Ledger(workload.ledger.blocks)
    trusts = [TrustStore(workload.trust.certificates(), workload.trust.members)
              for _ in range(threads)]
    txs_total = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    start = time.perf_counter()
    for i, batch in enumerate(workload.rounds):
        if pool is None:
            txs = _validate_shard(ledger, trusts[0], batch)
        else:
            shards = [batch[k::threads] for k in range(threads)]
            txs = [tx for part in pool.map(_validate_shard, [ledger] * threads, trusts, shards)
                   for tx in part]
        ledger.append_block(make_block(ledger.tip, txs, EPOCH + timedelta(minutes=i + 1)))
        txs_total += len(txs)
    seconds = time.perf_counter() - start
    if pool is not None:
        pool.shutdown()
    return BenchResult(workload.claim_count, txs_total, seconds, threads, ledger)
