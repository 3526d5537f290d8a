"""Declarative scenarios: who exists, who hands what to whom and when.

A scenario file is YAML (or JSON) with this shape::

    version: 1
    seed: 7                        # keys, encryption and network RNG
    epoch: "2018-03-01T00:00:00Z"  # time of tick 0
    tick_seconds: 60
    signature_scheme: ed25519      # or mock-hmac-sha256
    shipment: "9074729-2018-03-01" # default shipment id
    default_weight: 12000.0
    network: {latency: [1, 2], drop_rate: 0.0, round_ticks: null, max_rounds: 2000,
              retry_ticks: null, max_retries: 12,
              partitions: [{start: 0, end: 30, group: [NL]}],
              link_drop: [{from: NL, to: DE, rate: 1.0}]}
    agencies:  [{id: NL, location: [51.95, 4.14]}, ...]
    operators: [{id: X, agency: NL, location: [51.9, 4.3]}, ...]
    events:
      - {tick: 0,  type: reset, agency: NL, container: CSQU3054383, holder: X}
      - {tick: 10, type: transfer, from: X, to: Y, container: CSQU3054383}
      - {tick: 20, type: hole_exit, actor: Y, container: CSQU3054383}
      - {tick: 30, type: hole_enter, actor: Z, container: CSQU3054383}
      - {tick: 40, type: package, actor: Z, container: CSQU3054383, package_id: P1,
         sender: S, receiver: R, action: INSERT, contents: toys, weight: 12.5,
         destination: DE}
      - {tick: 50, type: revoke, agency: NL, operator: X}
      - {tick: 60, type: forge, mode: bad_signature, actor: X, from: X, to: Y,
         container: CSQU3054383}
      - {tick: 70, type: equivocate, actor: Y, container: CSQU3054383, recipients: [Z, W]}

Transfer events take ``sign`` (default: both parties) to model a party that
never signs, plus optional ``location``, ``weight``, ``shipment`` and
per-signer ``overrides``. Unless given, a claim's time is the event tick,
its location the handing-over party's location and its weight
``default_weight``. Forge modes are ``bad_signature`` (garbled signature),
``impersonate`` (``actor`` signs a claim naming ``signer``) and
``ignore_revocation`` (a revoked ``actor`` broadcasts anyway). Ticks must
not decrease.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .consensus import (
    Clock,
    CrlUpdate,
    CustomsNode,
    NetworkConfig,
    NetworkRun,
    OperatorNode,
    Partition,
    Send,
    conflicting_commits,
    node_id,
    run_network,
)
from .identity import (
    ED25519,
    MOCK,
    X25519,
    CertificateAuthority,
    DecryptionFailure,
    KeyPair,
    Role,
    TrustStore,
    decrypt_package_claim,
    encrypt_package_claim,
    generate_keypair,
    sign_claim,
)
from .ledger import Ledger, Transaction, TxKind
from .model import (
    EPSILON,
    AgencyId,
    ContainerClaim,
    ContainerId,
    GeoLocation,
    ModelError,
    OperatorId,
    PackageAction,
    PackageClaim,
    PackageClaimEnvelope,
    ShipmentId,
    Signature,
    claim_id,
    iso6346_assignable,
    normalize_weight,
    parse_container_id,
    parse_shipment_id,
    parse_timestamp,
)
from .validation import Validator, chain_invariant_findings, replay_ledger

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    pass


class ScenarioValidationError(ScenarioError):
    pass


class RevokedActor(ScenarioError):
    pass


class UnknownDestinationAgency(ScenarioError):
    pass


# --------------------------------------------------------------------------
# Scenario description
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Meta:
    location: GeoLocation | None = None
    weight: Decimal | None = None
    shipment: ShipmentId | None = None


@dataclass(frozen=True)
class Actor:
    id: str
    location: GeoLocation
    agency: str | None = None  # issuing agency, operators only


@dataclass(frozen=True)
class Transfer:
    tick: int
    from_: OperatorId
    to: OperatorId
    container: ContainerId
    sign: tuple[OperatorId, ...]
    meta: Meta = Meta()
    overrides: Mapping[OperatorId, Meta] = field(default_factory=dict)


@dataclass(frozen=True)
class HoleExit:
    tick: int
    actor: OperatorId
    container: ContainerId
    meta: Meta = Meta()


@dataclass(frozen=True)
class HoleEnter:
    tick: int
    actor: OperatorId
    container: ContainerId
    meta: Meta = Meta()


@dataclass(frozen=True)
class PackageOp:
    tick: int
    actor: OperatorId
    container: ContainerId
    package_id: str
    sender: str
    receiver: str
    action: PackageAction
    contents: str
    weight: Decimal
    destination: AgencyId
    meta: Meta = Meta()


@dataclass(frozen=True)
class Revoke:
    tick: int
    agency: AgencyId
    operator: OperatorId


@dataclass(frozen=True)
class ResetChain:
    tick: int
    agency: AgencyId
    container: ContainerId
    holder: OperatorId
    meta: Meta = Meta()


@dataclass(frozen=True)
class Forge:
    tick: int
    mode: str
    actor: OperatorId
    from_: OperatorId
    to: OperatorId
    container: ContainerId
    signer: OperatorId | None = None
    meta: Meta = Meta()


@dataclass(frozen=True)
class Equivocate:
    tick: int
    actor: OperatorId
    container: ContainerId
    recipients: tuple[OperatorId, OperatorId]
    cosign: bool = True


FORGE_MODES = ("bad_signature", "impersonate", "ignore_revocation")


@dataclass(frozen=True)
class Scenario:
    agencies: tuple[Actor, ...]
    operators: tuple[Actor, ...]
    events: tuple = ()
    seed: int = 0
    epoch: datetime = datetime(2018, 3, 1, tzinfo=timezone.utc)
    tick_seconds: int = 60
    signature_scheme: str = ED25519
    shipment: ShipmentId = field(default_factory=lambda: parse_shipment_id("9074729-2018-03-01"))
    default_weight: Decimal = Decimal("12000")
    network: NetworkConfig = field(default_factory=NetworkConfig)
    name: str = ""

    @property
    def clock(self) -> Clock:
        return Clock(self.epoch, self.tick_seconds)


class _Reader:
    """Field access on a mapping that reports the path of whatever is wrong."""

    def __init__(self, data, path: str):
        if not isinstance(data, Mapping):
            raise ScenarioValidationError(f"{path}: expected a mapping")
        self.data, self.path = data, path
        self.used: set[str] = set()

    def get(self, key, default=..., conv: Callable | None = None):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if default is ...:
                raise ScenarioValidationError(f"{self.path}.{key}: required")
            return default
        value = self.data[key]
        if conv is None:
            return value
        try:
            return conv(value)
        except ScenarioValidationError:
            raise
        except (ModelError, ValueError, TypeError, KeyError) as exc:
            raise ScenarioValidationError(f"{self.path}.{key}: {exc}") from None

    def done(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ScenarioValidationError(f"{self.path}: unknown field(s) {', '.join(extra)}")


def _location(value) -> GeoLocation:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError("location must be [latitude, longitude]")
    return GeoLocation(float(value[0]), float(value[1]))


def _time(value) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return parse_timestamp(str(value))


def _tick(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError("tick must be a non-negative integer")
    return value


def _network(data) -> NetworkConfig:
    r = _Reader(data, "network")
    parts = tuple(
        Partition(int(p["start"]), int(p["end"]),
                  frozenset(node_id(AgencyId(str(g))) for g in p["group"]))
        for p in r.get("partitions", [])
    )
    links = {}
    for item in r.get("link_drop", []):
        links[(node_id(AgencyId(str(item["from"]))), node_id(AgencyId(str(item["to"]))))] = \
            float(item["rate"])
    lat = r.get("latency", [1, 2])
    kwargs = dict(
        latency=(int(lat[0]), int(lat[1])),
        drop_rate=float(r.get("drop_rate", 0.0)),
        partitions=parts,
        link_drop=links,
        round_ticks=r.get("round_ticks", None),
        max_rounds=int(r.get("max_rounds", 2000)),
        retry_ticks=r.get("retry_ticks", None),
        max_retries=int(r.get("max_retries", 12)),
    )
    r.done()
    return NetworkConfig(**kwargs)


def _meta(r: _Reader) -> Meta:
    return Meta(
        location=r.get("location", None, _location),
        weight=r.get("weight", None, normalize_weight),
        shipment=r.get("shipment", None, lambda v: parse_shipment_id(str(v))),
    )


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    """Build and cross-check a :class:`Scenario` from a parsed document."""
    top = _Reader(doc, "scenario")
    version = top.get("version")
    if version != SCHEMA_VERSION:
        raise ScenarioValidationError(f"scenario.version: unsupported version {version!r}")
    name = str(top.get("name", ""))
    seed = top.get("seed", 0, int)
    epoch = top.get("epoch", datetime(2018, 3, 1, tzinfo=timezone.utc), _time)
    tick_seconds = top.get("tick_seconds", 60, int)
    if tick_seconds < 1:
        raise ScenarioValidationError("scenario.tick_seconds: must be positive")
    scheme = top.get("signature_scheme", ED25519, str)
    if scheme not in (ED25519, MOCK):
        raise ScenarioValidationError(f"scenario.signature_scheme: unsupported {scheme!r}")
    shipment = top.get("shipment", "9074729-2018-03-01", lambda v: parse_shipment_id(str(v)))
    default_weight = top.get("default_weight", "12000", normalize_weight)
    try:
        network = top.get("network", NetworkConfig(seed=seed),
                          lambda d: replace(_network(d), seed=seed))
    except (KeyError, IndexError) as exc:
        raise ScenarioValidationError(f"network: missing {exc}") from None

    agencies, operators = [], []
    for i, item in enumerate(top.get("agencies")):
        r = _Reader(item, f"agencies[{i}]")
        ident = r.get("id", conv=lambda v: AgencyId(str(v)).value)
        r.get("country", None)
        agencies.append(Actor(ident, r.get("location", GeoLocation(0, 0), _location)))
        r.done()
    if not agencies:
        raise ScenarioValidationError("agencies: at least one customs agency is required")
    agency_ids = [a.id for a in agencies]
    if len(set(agency_ids)) != len(agency_ids):
        raise ScenarioValidationError("agencies: duplicate id")
    for i, item in enumerate(top.get("operators", [])):
        r = _Reader(item, f"operators[{i}]")
        ident = r.get("id", conv=lambda v: OperatorId(str(v)).value)
        if ident == EPSILON.value:
            raise ScenarioValidationError(f"operators[{i}].id: epsilon is not an operator")
        issuer = str(r.get("agency", None) or r.get("country", None) or "")
        if issuer not in agency_ids:
            raise ScenarioValidationError(f"operators[{i}].agency: undeclared agency {issuer!r}")
        operators.append(Actor(ident, r.get("location", GeoLocation(0, 0), _location), issuer))
        r.done()
    operator_ids = {o.id for o in operators}
    if len(operator_ids) != len(operators):
        raise ScenarioValidationError("operators: duplicate id")
    issuer_of = {o.id: o.agency for o in operators}

    def op(path, allow_epsilon=False):
        def conv(value):
            text = str(value)
            if allow_epsilon and text in (EPSILON.value, "epsilon"):
                return EPSILON
            if text not in operator_ids:
                raise ScenarioValidationError(f"{path}: undeclared operator {text!r}")
            return OperatorId(text)
        return conv

    def agency(path):
        def conv(value):
            if str(value) not in agency_ids:
                raise ScenarioValidationError(f"{path}: undeclared agency {value!r}")
            return AgencyId(str(value))
        return conv

    def container(value):
        return parse_container_id(str(value))

    events = []
    last_tick = 0
    for i, item in enumerate(top.get("events", [])):
        path = f"events[{i}]"
        r = _Reader(item, path)
        tick = r.get("tick", conv=_tick)
        if tick < last_tick:
            raise ScenarioValidationError(f"{path}.tick: ticks must not decrease")
        last_tick = tick
        kind = r.get("type")
        if kind == "transfer":
            x = r.get("from", conv=op(f"{path}.from"))
            y = r.get("to", conv=op(f"{path}.to"))
            if x == y:
                raise ScenarioValidationError(f"{path}: from and to are the same operator")
            signers = tuple(r.get("sign", [x, y],
                                  lambda v: [op(f"{path}.sign")(s) for s in v]))
            if not set(signers) <= {x, y}:
                raise ScenarioValidationError(f"{path}.sign: signers must be from or to")
            overrides = {}
            for who, sub in r.get("overrides", {}).items():
                if op(f"{path}.overrides")(who) not in (x, y):
                    raise ScenarioValidationError(f"{path}.overrides: {who} is not a party")
                sr = _Reader(sub, f"{path}.overrides.{who}")
                overrides[OperatorId(str(who))] = _meta(sr)
                sr.done()
            ev = Transfer(tick, x, y, r.get("container", conv=container), signers,
                          _meta(r), overrides)
        elif kind in ("hole_exit", "hole_enter"):
            cls = HoleExit if kind == "hole_exit" else HoleEnter
            ev = cls(tick, r.get("actor", conv=op(f"{path}.actor")),
                     r.get("container", conv=container), _meta(r))
        elif kind == "package":
            meta = Meta(location=r.get("location", None, _location))
            ev = PackageOp(
                tick, r.get("actor", conv=op(f"{path}.actor")),
                r.get("container", conv=container),
                str(r.get("package_id")), str(r.get("sender")), str(r.get("receiver")),
                r.get("action", "INSERT", PackageAction), str(r.get("contents", "")),
                r.get("weight", "1", normalize_weight),
                r.get("destination", conv=agency(f"{path}.destination")), meta)
        elif kind == "revoke":
            a = r.get("agency", conv=agency(f"{path}.agency"))
            o = r.get("operator", conv=op(f"{path}.operator"))
            if issuer_of[o.value] != a.value:
                raise ScenarioValidationError(
                    f"{path}: {o} was certified by {issuer_of[o.value]}, not {a}")
            ev = Revoke(tick, a, o)
        elif kind == "reset":
            ev = ResetChain(tick, r.get("agency", conv=agency(f"{path}.agency")),
                            r.get("container", conv=container),
                            r.get("holder", conv=op(f"{path}.holder")), _meta(r))
        elif kind == "forge":
            mode = r.get("mode")
            if mode not in FORGE_MODES:
                raise ScenarioValidationError(f"{path}.mode: one of {', '.join(FORGE_MODES)}")
            actor = r.get("actor", conv=op(f"{path}.actor"))
            x = r.get("from", conv=op(f"{path}.from", allow_epsilon=True))
            y = r.get("to", conv=op(f"{path}.to", allow_epsilon=True))
            signer = r.get("signer", actor, op(f"{path}.signer"))
            if signer not in (x, y):
                raise ScenarioValidationError(f"{path}.signer: must be from or to")
            ev = Forge(tick, mode, actor, x, y, r.get("container", conv=container), signer,
                       _meta(r))
        elif kind == "equivocate":
            rec = r.get("recipients", conv=lambda v: tuple(op(f"{path}.recipients")(s) for s in v))
            actor = r.get("actor", conv=op(f"{path}.actor"))
            if len(rec) != 2 or rec[0] == rec[1] or actor in rec:
                raise ScenarioValidationError(
                    f"{path}.recipients: two distinct operators other than the actor")
            ev = Equivocate(tick, actor, r.get("container", conv=container), rec,
                            bool(r.get("cosign", True)))
        else:
            raise ScenarioValidationError(f"{path}.type: unknown event type {kind!r}")
        r.done()
        events.append(ev)
    top.done()
    return Scenario(tuple(agencies), tuple(operators), tuple(events), seed, epoch, tick_seconds,
                    scheme, shipment, default_weight, network, name)


def load_scenario(source) -> Scenario:
    """Parse a scenario from a path, a YAML/JSON string or an already-parsed dict."""
    if isinstance(source, Mapping):
        return scenario_from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).suffix in (".yaml", ".yml", ".json")):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioValidationError(f"cannot read scenario: {exc}") from None
    else:
        text = source
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioValidationError(f"not valid YAML: {exc}") from None
    return scenario_from_dict(doc)


def bundled_scenarios() -> list[str]:
    root = resources.files("freightchain") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_scenario_text(name: str) -> str:
    path = resources.files("freightchain") / "scenarios" / f"{name}.yaml"
    if not path.is_file():
        raise ScenarioValidationError(f"no bundled scenario named {name!r}")
    return path.read_text(encoding="utf-8")


# --------------------------------------------------------------------------
# The world a scenario runs in
# --------------------------------------------------------------------------

def derive_seed(seed: int, *parts) -> bytes:
    text = "/".join(str(p) for p in ("freightchain", seed) + parts)
    return hashlib.sha256(text.encode("utf-8")).digest()


class World:
    """Keys, certificates and nodes for one scenario run."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.clock = scenario.clock
        scheme, seed = scenario.signature_scheme, scenario.seed
        self.locations: dict[Any, GeoLocation] = {}
        self.cas: dict[AgencyId, CertificateAuthority] = {}
        self.enc_keys: dict[AgencyId, KeyPair] = {}
        for a in scenario.agencies:
            aid = AgencyId(a.id)
            self.cas[aid] = CertificateAuthority(aid, generate_keypair(
                scheme, derive_seed(seed, "agency", a.id)))
            self.enc_keys[aid] = generate_keypair(X25519, derive_seed(seed, "enc", a.id))
            self.locations[aid] = a.location
        self.op_keys: dict[OperatorId, KeyPair] = {}
        self.op_certs = {}
        for o in scenario.operators:
            oid = OperatorId(o.id)
            keys = generate_keypair(scheme, derive_seed(seed, "operator", o.id))
            self.op_keys[oid] = keys
            self.op_certs[oid] = self.cas[AgencyId(o.agency)].issue(
                oid, Role.OPERATOR, keys.public_key, key_scheme=scheme)
            self.locations[oid] = o.location
        self.certificates = [ca.self_certificate for ca in self.cas.values()]
        self.certificates += list(self.op_certs.values())
        self.members = sorted(self.cas)
        config = scenario.network
        customs = [node_id(a) for a in self.members]
        op_ids = [node_id(o) for o in self.op_keys]
        self.nodes = {a: CustomsNode(a, self.members, self.trust_store(), config,
                                     clock=self.clock, operators=op_ids)
                      for a in self.members}
        self.operator_nodes = {o: OperatorNode(o, customs, config, self.op_certs[o])
                               for o in self.op_keys}
        self.refused: list[dict] = []
        self.forged: list[str] = []

    def trust_store(self) -> TrustStore:
        return TrustStore(self.certificates, self.members)

    def final_trust(self) -> TrustStore:
        return TrustStore(self.certificates, self.members,
                          [ca.crl for ca in self.cas.values()])

    # claim construction -----------------------------------------------------

    def _claim(self, tick: int, container: ContainerId, x: OperatorId, y: OperatorId,
               signer, meta: Meta = Meta(), site=None) -> ContainerClaim:
        where = site if site is not None else (x if not x.is_epsilon else y)
        return ContainerClaim(
            container=container,
            shipment=meta.shipment or self.scenario.shipment,
            from_=x, to=y,
            time=self.clock.at(tick),
            location=meta.location or self.locations[where],
            weight_kg=meta.weight if meta.weight is not None else self.scenario.default_weight,
            signer=signer,
        )

    def _keys(self, party) -> KeyPair:
        return self.cas[party].keys if isinstance(party, AgencyId) else self.op_keys[party]

    def _require_live(self, *actors: OperatorId) -> None:
        for a in actors:
            if self.operator_nodes[a].revoked:
                raise RevokedActor(f"{a} holds a revoked certificate")

    def _broadcast(self, tick: int, claim) -> list[tuple[str, Send]]:
        signer = claim.signer
        if isinstance(signer, AgencyId):
            node = self.nodes[signer]
            return [(node.id, s) for s in node.submit_own(tick, claim)]
        node = self.operator_nodes[signer]
        return [(node.id, s) for s in node.track(tick, claim)]

    # actions ----------------------------------------------------------------

    def submit_transfer(self, tick: int, x: OperatorId, y: OperatorId, container: ContainerId,
                        meta: Meta = Meta(), *, sign=None,
                        overrides: Mapping[OperatorId, Meta] | None = None):
        """Both parties' claims for one handoff; returns ``(claims, sends)``."""
        if x == y:
            raise ValueError("an operator cannot hand a container to itself")
        signers = tuple(sign) if sign is not None else (x, y)
        self._require_live(*signers)
        claims, sends = [], []
        for s in signers:
            m = (overrides or {}).get(s, Meta())
            m = Meta(m.location or meta.location,
                     m.weight if m.weight is not None else meta.weight,
                     m.shipment or meta.shipment)
            claim = sign_claim(self._claim(tick, container, x, y, s, m), self.op_keys[s])
            claims.append(claim)
            sends += self._broadcast(tick, claim)
        return claims, sends

    def submit_hole_exit(self, tick: int, a: OperatorId, container: ContainerId,
                         meta: Meta = Meta()):
        self._require_live(a)
        claim = sign_claim(self._claim(tick, container, a, EPSILON, a, meta), self.op_keys[a])
        return claim, self._broadcast(tick, claim)

    def submit_hole_enter(self, tick: int, b: OperatorId, container: ContainerId,
                          meta: Meta = Meta()):
        self._require_live(b)
        claim = sign_claim(self._claim(tick, container, EPSILON, b, b, meta), self.op_keys[b])
        return claim, self._broadcast(tick, claim)

    def submit_package(self, tick: int, ev: PackageOp, ephemeral_seed: bytes | None = None):
        self._require_live(ev.actor)
        if ev.destination not in self.enc_keys:
            raise UnknownDestinationAgency(f"{ev.destination} is not a customs member")
        plain = PackageClaim(ev.container, ev.package_id, ev.sender, ev.receiver,
                             self.clock.at(tick), ev.meta.location or self.locations[ev.actor],
                             ev.weight, ev.action, ev.contents)
        env = encrypt_package_claim(plain, ev.destination, self.enc_keys[ev.destination].public_key,
                                    ev.actor, ephemeral_seed=ephemeral_seed)
        env = sign_claim(env, self.op_keys[ev.actor])
        return env, self._broadcast(tick, env)

    def reset_chain(self, tick: int, agency: AgencyId, container: ContainerId,
                    holder: OperatorId, meta: Meta = Meta()):
        claim = self._claim(tick, container, EPSILON, holder, agency, meta, site=agency)
        claim = sign_claim(claim, self.cas[agency].keys)
        return claim, self._broadcast(tick, claim)

    def revoke(self, tick: int, agency: AgencyId, operator: OperatorId):
        crl = self.cas[agency].revoke(self.op_certs[operator].serial)
        dsts = tuple(node_id(a) for a in self.members) + \
            tuple(node_id(o) for o in self.operator_nodes)
        return [(node_id(agency), Send(dsts, CrlUpdate(crl), control=True))]

    def forge(self, tick: int, ev: Forge):
        signer = ev.signer or ev.actor
        claim = self._claim(tick, ev.container, ev.from_, ev.to, signer, ev.meta)
        signed = sign_claim(claim, self.op_keys[ev.actor])
        if ev.mode == "bad_signature":
            raw = bytearray(signed.signature.value)
            raw[0] ^= 0xFF
            signed = signed.signed(Signature(signed.signature.scheme, bytes(raw)))
        self.forged.append(claim_id(signed))
        node = self.operator_nodes[ev.actor]
        return signed, [(node.id, s) for s in node.track(tick, signed)]

    def equivocate(self, tick: int, ev: Equivocate):
        sends, claims = [], []
        for rcpt in ev.recipients:
            sign = (ev.actor, rcpt) if ev.cosign else (ev.actor,)
            c, s = self.submit_transfer(tick, ev.actor, rcpt, ev.container, sign=sign)
            claims += c
            sends += s
        return claims, sends

    def action(self, index: int, ev) -> Callable[[int], list]:
        def run(tick: int):
            try:
                if isinstance(ev, Transfer):
                    return self.submit_transfer(tick, ev.from_, ev.to, ev.container, ev.meta,
                                                sign=ev.sign, overrides=ev.overrides)[1]
                if isinstance(ev, HoleExit):
                    return self.submit_hole_exit(tick, ev.actor, ev.container, ev.meta)[1]
                if isinstance(ev, HoleEnter):
                    return self.submit_hole_enter(tick, ev.actor, ev.container, ev.meta)[1]
                if isinstance(ev, PackageOp):
                    eph = derive_seed(self.scenario.seed, "ephemeral", index)
                    return self.submit_package(tick, ev, eph)[1]
                if isinstance(ev, ResetChain):
                    return self.reset_chain(tick, ev.agency, ev.container, ev.holder, ev.meta)[1]
                if isinstance(ev, Revoke):
                    return self.revoke(tick, ev.agency, ev.operator)
                if isinstance(ev, Forge):
                    return self.forge(tick, ev)[1]
                if isinstance(ev, Equivocate):
                    return self.equivocate(tick, ev)[1]
            except (RevokedActor, UnknownDestinationAgency) as exc:
                self.refused.append({"event": index, "tick": tick,
                                     "type": type(ev).__name__, "reason": str(exc)})
                return []
            raise ScenarioError(f"unhandled event {ev!r}")
        return run


# --------------------------------------------------------------------------
# Running and reporting
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    committed: dict[str, int]
    rejections: list[dict]
    refused: list[dict]
    holders: dict[str, str]
    pool_residue: list[dict]
    nodes: dict[str, dict]
    converged: bool
    audit_divergences: list[dict]
    invariant_violations: list[str]
    messages: dict[str, int]
    rounds: int
    ticks: int

    def to_record(self) -> dict:
        return {
            "committed": self.committed,
            "rejections": self.rejections,
            "refused": self.refused,
            "holders": self.holders,
            "pool_residue": self.pool_residue,
            "nodes": self.nodes,
            "converged": self.converged,
            "audit_divergences": self.audit_divergences,
            "invariant_violations": self.invariant_violations,
            "messages": self.messages,
            "rounds": self.rounds,
            "ticks": self.ticks,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_table(self) -> str:
        out = [f"rounds {self.rounds}, ticks {self.ticks}, converged: "
               f"{'yes' if self.converged else 'NO'}", "", "committed"]
        out += [f"  {k:<10} {v:>6}" for k, v in sorted(self.committed.items())]
        out += ["", "messages"] + [f"  {k:<10} {v:>6}" for k, v in sorted(self.messages.items())]
        if self.holders:
            out += ["", "final holders"]
            out += [f"  {c}  {h}" for c, h in sorted(self.holders.items())]
        if self.rejections:
            out += ["", "rejected claims"]
            out += [f"  {r['claim_id'][:12]}  {r['reason']:<32} {r['claim']}" for r in self.rejections]
        if self.pool_residue:
            out += ["", "still pending"]
            out += [f"  {r['claim_id'][:12]}  {r['claim']}" for r in self.pool_residue]
        if self.refused:
            out += ["", "refused locally"]
            out += [f"  tick {r['tick']:<5} {r['type']:<10} {r['reason']}" for r in self.refused]
        if self.audit_divergences:
            out += ["", "audit divergences"]
            out += [f"  {d['container']} {d['from']}->{d['to']}: {d['field']} "
                    f"{d['values'][0]} vs {d['values'][1]}" for d in self.audit_divergences]
        out += ["", "nodes"]
        out += [f"  {k:<16} height {v['height']:>4}  tip {v['tip'][:16]}"
                for k, v in sorted(self.nodes.items())]
        out += ["", "invariants: " + ("ok" if not self.invariant_violations else "VIOLATED")]
        out += [f"  {v}" for v in self.invariant_violations]
        return "\n".join(out) + "\n"


@dataclass
class ScenarioRun:
    scenario: Scenario
    world: World
    network: NetworkRun
    report: RunReport

    @property
    def ledgers(self) -> dict[str, Ledger]:
        return self.network.ledgers

    @property
    def trace(self) -> list:
        return self.network.trace

    @property
    def reference_ledger(self) -> Ledger:
        return self.world.nodes[self.world.members[0]].ledger


def _describe(claim) -> str:
    if isinstance(claim, PackageClaimEnvelope):
        return f"package for {claim.destination_agency} | {claim.signer}"
    return str(claim)


def audit_divergences(ledger: Ledger) -> list[dict]:
    """Fields on which the two halves of a committed TRANSFER disagree."""
    out = []
    for block in ledger.blocks:
        for tx in block.transactions:
            if tx.kind is not TxKind.TRANSFER or len(tx.claims) != 2:
                continue
            a, b = tx.claims
            for name in ("location", "weight_kg", "shipment"):
                va, vb = getattr(a, name), getattr(b, name)
                if va != vb:
                    text = (lambda v: ",".join(v.as_text())) if name == "location" else str
                    out.append({"height": block.height, "container": str(tx.container),
                                "from": str(tx.from_), "to": str(tx.to), "field": name,
                                "values": [text(va), text(vb)]})
    return out


def build_report(world: World, net: NetworkRun) -> RunReport:
    nodes = [world.nodes[a] for a in world.members]
    ref = nodes[0].ledger
    dumps = [n.ledger.dumps() for n in nodes]
    converged = len(set(dumps)) == 1
    committed = Counter(tx.kind.value for tx in ref.transactions())
    committed_ids = {cid for tx in ref.transactions() for cid in tx.claim_ids}

    residue: dict[str, Any] = {}
    for n in nodes:
        for cid, claim in n.mempool.items():
            if cid not in committed_ids:
                residue.setdefault(cid, claim)
    # what a single validator would now say about the leftovers
    verdicts = {}
    validator = Validator(ref, world.final_trust())
    end = world.clock.at(net.ticks)

    def order(item):
        cid, c = item
        return (c.time if isinstance(c, ContainerClaim) else world.clock.epoch, cid)

    for cid, claim in sorted(residue.items(), key=order):
        verdicts[cid] = validator.submit(claim, now=end).code

    rejected: dict[str, dict] = {}
    for n in nodes:
        for cid, (reason, claim) in n.rejections.items():
            if cid in committed_ids or cid in residue:
                continue
            entry = rejected.setdefault(cid, {"claim_id": cid, "claim": _describe(claim),
                                              "reasons": set()})
            entry["reasons"].add(reason)
    for cid, code in verdicts.items():
        if code not in ("PENDING", "ACCEPTED"):
            rejected[cid] = {"claim_id": cid, "claim": _describe(residue[cid]), "reasons": {code}}
    rejections = [{"claim_id": e["claim_id"], "claim": e["claim"],
                   "reason": ",".join(sorted(e["reasons"]))}
                  for e in sorted(rejected.values(), key=lambda e: e["claim_id"])]
    pool_residue = [{"claim_id": cid, "claim": _describe(residue[cid]), "verdict": code}
                    for cid, code in sorted(verdicts.items()) if code in ("PENDING", "ACCEPTED")]

    holders = {str(c): str(ref.latest_claim(c).to) for c in ref.containers()}
    node_info = {n.id: {"height": n.ledger.height, "tip": n.ledger.tip.block_hash,
                        "identical": n.ledger.dumps() == dumps[0]} for n in nodes}

    violations = []
    for h, digests in sorted(conflicting_commits(net.trace).items()):
        violations.append(f"height {h}: nodes committed different blocks {sorted(digests)}")
    trust = world.final_trust()
    for text in sorted(set(dumps)):
        ledger = next(n.ledger for n in nodes if n.ledger.dumps() == text)
        for f in chain_invariant_findings(ledger) + replay_ledger(ledger, trust):
            violations.append(f"{nodes[dumps.index(text)].id} {f}")
    if net.trace:
        commits = Counter(r["from"] for r in net.trace if r["event"] == "commit")
        for n in nodes:
            if commits.get(n.id, 0) != n.ledger.height:
                violations.append(f"{n.id}: trace shows {commits.get(n.id, 0)} commits, "
                                  f"ledger height is {n.ledger.height}")
    forged = set(world.forged) & committed_ids
    violations += [f"forged claim {cid} was committed" for cid in sorted(forged)]
    messages = Counter(r["event"] for r in net.trace)
    return RunReport(dict(sorted(committed.items())), rejections, list(world.refused), holders,
                     pool_residue, node_info, converged, audit_divergences(ref), violations,
                     dict(sorted(messages.items())), net.rounds, net.ticks)


def run_scenario(scenario: Scenario | Mapping | str | Path,
                 config: NetworkConfig | None = None) -> ScenarioRun:
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    if config is not None:
        scenario = replace(scenario, network=config)
    world = World(scenario)
    schedule = [(ev.tick, world.action(i, ev)) for i, ev in enumerate(scenario.events)]
    net = run_network([world.nodes[a] for a in world.members], scenario.network, schedule,
                      list(world.operator_nodes.values()))
    return ScenarioRun(scenario, world, net, build_report(world, net))


# --------------------------------------------------------------------------
# Route reconstruction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Route:
    container: ContainerId
    legs: tuple[Transaction, ...]
    packages: tuple[PackageClaim, ...]
    opaque: tuple[dict, ...]


def reconstruct_route(agency: AgencyId, container: ContainerId, ledger: Ledger,
                      private_key: KeyPair | bytes | None = None) -> Route:
    """The container's committed custody chain plus the package claims ``agency`` can read."""
    legs = tuple(ledger.container_history(container))
    packages, opaque = [], []
    for block in ledger.blocks:
        for tx in block.transactions:
            if tx.kind is not TxKind.PACKAGE:
                continue
            env = tx.claims[0]
            mine = env.destination_agency == agency and private_key is not None
            if mine:
                try:
                    plain = decrypt_package_claim(env, private_key)
                except DecryptionFailure:
                    mine = False
                else:
                    if plain.container == container:
                        packages.append(plain)
                    continue
            opaque.append({"height": block.height, "claim_id": tx.claim_ids[0],
                           "destination": env.destination_agency.value,
                           "signer": env.signer.value})
    return Route(container, legs, tuple(packages), tuple(opaque))


# --------------------------------------------------------------------------
# Synthetic workloads
# --------------------------------------------------------------------------

def synthetic_container_ids(count: int, owner: str = "SYNU") -> list[ContainerId]:
    out, serial = [], 0
    while len(out) < count:
        prefix = f"{owner}{serial:06d}"
        if iso6346_assignable(prefix):
            out.append(ContainerId.from_prefix(prefix))
        serial += 1
    return out


def synthetic_scenario(*, agencies: int = 4, containers: int = 10, operators: int | None = None,
                       hops: int = 2, seed: int = 0, drop_rate: float = 0.0,
                       latency: tuple[int, int] = (1, 2), spread_rounds: int = 8,
                       max_rounds: int = 2000) -> dict:
    """A scenario document: every container is reset once, then handed on ``hops`` times."""
    import random

    rng = random.Random(seed)
    operators = operators or max(4, agencies * 2)
    agency_ids = [f"C{i:02d}" for i in range(agencies)]
    op_ids = [f"OP{i:03d}" for i in range(operators)]
    round_ticks = 3 * (latency[1] + 1)
    gap = 3 * round_ticks
    doc = {
        "version": SCHEMA_VERSION,
        "name": f"synthetic-{agencies}x{containers}",
        "seed": seed,
        "network": {"latency": list(latency), "drop_rate": drop_rate, "max_rounds": max_rounds},
        "agencies": [{"id": a, "location": [round(-60 + 120 * i / max(1, agencies - 1), 4),
                                            round(-150 + 7 * i, 4)]}
                     for i, a in enumerate(agency_ids)],
        "operators": [{"id": o, "agency": agency_ids[i % agencies],
                       "location": [round(rng.uniform(-60, 60), 4), round(rng.uniform(-170, 170), 4)]}
                      for i, o in enumerate(op_ids)],
    }
    events = []
    for cid in synthetic_container_ids(containers):
        start = rng.randrange(spread_rounds * round_ticks)
        holder = rng.choice(op_ids)
        events.append({"tick": start, "type": "reset", "agency": rng.choice(agency_ids),
                       "container": str(cid), "holder": holder})
        for h in range(1, hops + 1):
            nxt = rng.choice([o for o in op_ids if o != holder])
            events.append({"tick": start + h * gap, "type": "transfer", "from": holder,
                           "to": nxt, "container": str(cid)})
            holder = nxt
    events.sort(key=lambda e: e["tick"])
    doc["events"] = events
    return doc
