"""Append-only, hash-linked ledger of accepted transactions.

File format: UTF-8, one block per line, each line the compact JSON object

    {"block_hash": hex, "crl_versions": {agency: n}, "height": n,
     "prev_hash": hex, "time": "YYYY-MM-DDThh:mm:ssZ", "transactions": [tx, ...]}

with keys sorted and no whitespace; every line ends in ``\\n``. A
transaction is ``{"claims": [claim record, ...], "container": id | null,
"kind": "TRANSFER" | "RESET" | "PACKAGE"}`` (claim records are defined in
:mod:`freightchain.model`). ``block_hash`` is the SHA-256 hex digest of the
same JSON line with the ``block_hash`` key left out. Line 1 is the genesis
block: height 0, 64 zeros as ``prev_hash``, time 1970-01-01T00:00:00Z.

``crl_versions`` records, per certificate issuer, the revocation-list
version the block was validated under, so a replay can apply exactly the
same revocations.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .model import (
    ContainerClaim,
    ContainerId,
    InvalidClaim,
    ModelError,
    PackageClaimEnvelope,
    claim_from_record,
    claim_id,
    claim_to_record,
    format_timestamp,
    parse_container_id,
    parse_timestamp,
)

ZERO_HASH = "0" * 64
GENESIS_TIME = datetime(1970, 1, 1, tzinfo=timezone.utc)


class LedgerError(Exception):
    pass


class HashChainMismatch(LedgerError):
    pass


class HeightMismatch(LedgerError):
    pass


class CorruptLedger(LedgerError):
    pass


class TruncatedFile(CorruptLedger):
    pass


class TxKind(str, enum.Enum):
    TRANSFER = "TRANSFER"
    RESET = "RESET"
    PACKAGE = "PACKAGE"


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    claims: tuple
    container: ContainerId | None = None
    accepted_at: int | None = field(default=None, compare=False)

    @property
    def from_(self):
        return self.claims[0].from_

    @property
    def to(self):
        return self.claims[0].to

    @property
    def time(self) -> datetime:
        return max(c.time for c in self.claims)

    @property
    def claim_ids(self) -> tuple[str, ...]:
        return tuple(claim_id(c) for c in self.claims)

    @property
    def tx_id(self) -> str:
        h = hashlib.sha256(self.kind.value.encode())
        for cid in self.claim_ids:
            h.update(bytes.fromhex(cid))
        return h.hexdigest()

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "container": str(self.container) if self.container else None,
            "claims": [claim_to_record(c) for c in self.claims],
        }

    @classmethod
    def from_record(cls, rec: dict, height: int | None = None) -> Transaction:
        container = parse_container_id(rec["container"]) if rec["container"] else None
        claims = tuple(claim_from_record(c) for c in rec["claims"])
        return cls(TxKind(rec["kind"]), claims, container, height)


def transfer(*claims: ContainerClaim) -> Transaction:
    """A TRANSFER with claims ordered giver-signed first."""
    ordered = tuple(sorted(claims, key=lambda c: c.signer != c.from_))
    return Transaction(TxKind.TRANSFER, ordered, claims[0].container)


def reset(claim: ContainerClaim) -> Transaction:
    return Transaction(TxKind.RESET, (claim,), claim.container)


def package(envelope: PackageClaimEnvelope) -> Transaction:
    return Transaction(TxKind.PACKAGE, (envelope,), None)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    time: datetime
    transactions: tuple[Transaction, ...]
    crl_versions: Mapping[str, int] = field(default_factory=dict)
    block_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "crl_versions",
                           {k: int(v) for k, v in sorted(dict(self.crl_versions).items()) if v})
        txs = tuple(Transaction(t.kind, t.claims, t.container, self.height)
                    for t in self.transactions)
        object.__setattr__(self, "transactions", txs)
        if not self.block_hash:
            object.__setattr__(self, "block_hash", self.compute_hash())

    def body(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "time": format_timestamp(self.time),
            "crl_versions": dict(self.crl_versions),
            "transactions": [t.to_record() for t in self.transactions],
        }

    def compute_hash(self) -> str:
        return hashlib.sha256(_dumps(self.body()).encode("utf-8")).hexdigest()

    def to_line(self) -> str:
        return _dumps({**self.body(), "block_hash": self.block_hash})

    @classmethod
    def from_line(cls, line: str) -> Block:
        rec = json.loads(line)
        return cls(
            height=rec["height"],
            prev_hash=rec["prev_hash"],
            time=parse_timestamp(rec["time"]),
            transactions=tuple(Transaction.from_record(t, rec["height"])
                               for t in rec["transactions"]),
            crl_versions=rec["crl_versions"],
            block_hash=rec["block_hash"],
        )


def genesis_block() -> Block:
    return Block(0, ZERO_HASH, GENESIS_TIME, ())


def make_block(parent: Block, transactions: Iterable[Transaction], time: datetime,
               crl_versions: Mapping[str, int] | None = None) -> Block:
    """Successor of ``parent``; transactions are put in tx-id order."""
    txs = tuple(sorted(transactions, key=lambda t: t.tx_id))
    return Block(parent.height + 1, parent.block_hash, time, txs, crl_versions or {})


class Ledger:
    """One replica's chain. A single writer appends; readers see whole blocks only."""

    def __init__(self, blocks: Iterable[Block] | None = None):
        self.blocks: list[Block] = []
        self._latest: dict[ContainerId, Transaction] = {}
        self._history: dict[ContainerId, list[Transaction]] = {}
        self._committed: set[str] = set()
        for block in blocks if blocks is not None else [genesis_block()]:
            if not self.blocks:
                self._check_genesis(block)
                self.blocks.append(block)
                self._index(block)
            else:
                self.append_block(block)

    @staticmethod
    def _check_genesis(block: Block) -> None:
        if block.height != 0 or block.prev_hash != ZERO_HASH:
            raise HeightMismatch("ledger must start at a genesis block")
        if block.compute_hash() != block.block_hash:
            raise HashChainMismatch("genesis block hash does not match its contents")

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    def __eq__(self, other) -> bool:
        return isinstance(other, Ledger) and \
            [b.block_hash for b in self.blocks] == [b.block_hash for b in other.blocks]

    def append_block(self, block: Block) -> Ledger:
        if block.height != self.tip.height + 1:
            raise HeightMismatch(f"expected height {self.tip.height + 1}, got {block.height}")
        if block.prev_hash != self.tip.block_hash:
            raise HashChainMismatch(f"block {block.height} does not extend the tip")
        if block.compute_hash() != block.block_hash:
            raise HashChainMismatch(f"block {block.height} hash does not match its contents")
        self.blocks.append(block)
        self._index(block)
        return self

    def _index(self, block: Block) -> None:
        for tx in block.transactions:
            self._committed.update(tx.claim_ids)
            if tx.kind is TxKind.PACKAGE:
                continue
            self._latest[tx.container] = tx
            self._history.setdefault(tx.container, []).append(tx)

    def latest_claim(self, container: ContainerId) -> Transaction | None:
        return self._latest.get(container)

    def container_history(self, container: ContainerId) -> list[Transaction]:
        return list(self._history.get(container, ()))

    def containers(self) -> list[ContainerId]:
        return sorted(self._history)

    def is_committed(self, cid: str) -> bool:
        return cid in self._committed

    def transactions(self) -> Iterator[Transaction]:
        for block in self.blocks:
            yield from block.transactions

    def rebuild_index(self) -> tuple[dict, dict]:
        latest: dict = {}
        history: dict = {}
        for tx in self.transactions():
            if tx.kind is not TxKind.PACKAGE:
                latest[tx.container] = tx
                history.setdefault(tx.container, []).append(tx)
        return latest, history

    def index_snapshot(self) -> tuple[dict, dict]:
        return dict(self._latest), {k: list(v) for k, v in self._history.items()}

    # persistence ---------------------------------------------------------

    def dumps(self) -> str:
        return "".join(b.to_line() + "\n" for b in self.blocks)

    def persist(self, sink) -> None:
        data = self.dumps().encode("utf-8")
        if hasattr(sink, "write"):
            sink.write(data)
        else:
            Path(sink).write_bytes(data)


def loads(data: bytes | str) -> Ledger:
    """Parse and fully verify a ledger file's contents."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptLedger(f"not UTF-8: {exc}") from None
    else:
        text = data
    if not text:
        return Ledger()
    if not text.endswith("\n"):
        raise TruncatedFile("ledger file does not end with a complete record")
    blocks = []
    for lineno, line in enumerate(text[:-1].split("\n"), start=1):
        try:
            block = Block.from_line(line)
        except (ValueError, KeyError, TypeError, ModelError, InvalidClaim) as exc:
            raise CorruptLedger(f"line {lineno}: {exc}") from None
        if block.to_line() != line:
            raise CorruptLedger(f"line {lineno}: record is not in canonical form")
        if block.compute_hash() != block.block_hash:
            raise CorruptLedger(f"line {lineno}: block hash does not match contents")
        blocks.append(block)
    try:
        return Ledger(blocks)
    except LedgerError as exc:
        raise CorruptLedger(str(exc)) from None


def load(source) -> Ledger:
    if hasattr(source, "read"):
        return loads(source.read())
    return loads(Path(source).read_bytes())
