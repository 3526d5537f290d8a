"""Small fixed world shared by the unit tests."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

from freightchain.identity import (
    ED25519,
    CertificateAuthority,
    Role,
    TrustStore,
    generate_keypair,
    sign_claim,
)
from freightchain.model import (
    EPSILON,
    AgencyId,
    ContainerClaim,
    ContainerId,
    GeoLocation,
    OperatorId,
    parse_shipment_id,
)
from freightchain.scenario import derive_seed

T0 = datetime(2018, 3, 1, 8, 0, tzinfo=timezone.utc)
SHIP = parse_shipment_id("9074729-2018-03-01")
PORT = GeoLocation(51.95, 4.14)
C1 = ContainerId.from_prefix("CSQU305438")
C2 = ContainerId.from_prefix("MSCU123456")
C3 = ContainerId.from_prefix("TGHU000001")


class World:
    def __init__(self, agencies=("NL", "DE", "BE", "FR"), operators=("A", "X", "Y", "Z", "W"),
                 scheme=ED25519, seed=0):
        self.agencies = [AgencyId(a) for a in agencies]
        self.cas = {a: CertificateAuthority(a, generate_keypair(scheme, derive_seed(seed, "t", a.value)))
                    for a in self.agencies}
        self.ops = {o: OperatorId(o) for o in operators}
        self.keys = {}
        self.certs = {}
        for i, (name, op) in enumerate(self.ops.items()):
            ca = self.cas[self.agencies[i % len(self.agencies)]]
            self.keys[op] = generate_keypair(scheme, derive_seed(seed, "t", name))
            self.certs[op] = ca.issue(op, Role.OPERATOR, self.keys[op].public_key, key_scheme=scheme)
        for a, ca in self.cas.items():
            self.keys[a] = ca.keys

    def __getitem__(self, name):
        return self.ops[name]

    @property
    def customs(self) -> AgencyId:
        return self.agencies[0]

    def all_certs(self):
        return [ca.self_certificate for ca in self.cas.values()] + list(self.certs.values())

    def trust(self) -> TrustStore:
        return TrustStore(self.all_certs(), self.agencies, [ca.crl for ca in self.cas.values()])

    def claim(self, x, y, signer, *, container=C1, minutes=0, weight=1000, location=PORT,
              signed=True):
        x = EPSILON if x == "ε" else self.ops.get(x, x)
        y = EPSILON if y == "ε" else self.ops.get(y, y)
        if isinstance(signer, str):
            signer = self.ops[signer] if signer in self.ops else AgencyId(signer)
        c = ContainerClaim(container, SHIP, x, y, T0 + timedelta(minutes=minutes), location,
                           weight, signer)
        return sign_claim(c, self.keys[signer]) if signed else c

    def reset(self, holder, *, container=C1, minutes=0, agency=None):
        return self.claim("ε", holder, agency or self.customs, container=container, minutes=minutes)


# -- bridge from abstract oracle sequences to real signed claims ------------

CONTAINERS = (C1, C2, C3)


def dedupe(seq):
    """Drop abstract claims whose content repeats an earlier one (same claim id)."""
    seen, out = set(), []
    for a in seq:
        content = a[1:7]
        if content not in seen:
            seen.add(content)
            out.append(a)
    return out


def production_accepts(world: World, seq) -> set[tuple[int, ...]]:
    from freightchain.ledger import Ledger
    from freightchain.model import Signature, claim_id
    from freightchain.validation import Validator

    names = list(world.ops)
    label = {f"O{i}": n for i, n in enumerate(names)}
    label.update({"ε": "ε", "CUSTOMS": world.customs.value})
    keys_of = {}
    validator = Validator(Ledger(), world.trust())
    accepted = set()
    for a in seq:
        c = world.claim(label[a.frm], label[a.to], label[a.signer],
                        container=CONTAINERS[a.container], minutes=a.minute, weight=a.weight)
        if not a.sig_ok:
            raw = bytearray(c.signature.value)
            raw[5] ^= 0x40
            c = c.signed(Signature(c.signature.scheme, bytes(raw)))
        keys_of[claim_id(c)] = a.key
        out = validator.submit(c, now=T0 + timedelta(days=1))
        if out.accepted:
            accepted.add(tuple(keys_of[i] for i in out.transaction.claim_ids))
    return accepted


def rebuild(blocks, edit):
    """Apply ``edit(block) -> (transactions, crl_versions)`` and re-chain every hash."""
    from freightchain.ledger import Ledger, make_block

    led = Ledger()
    for b in blocks[1:]:
        txs, versions = edit(b)
        led.append_block(make_block(led.tip, txs, b.time, versions))
    return led


def write(led, path):
    led.persist(path)
    return str(path)
