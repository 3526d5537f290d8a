"""Domain values for freight claims.

Everything here is an immutable value: identifiers (ISO 6346 container
numbers, IMO shipment ids, operators and agencies), the claim types, and
the canonical byte encoding used for signing and hashing.

Canonical encoding
------------------
Each claim type starts with a 4-byte tag (``FCC\\x01`` container claim,
``FCP\\x01`` package claim, ``FCE\\x01`` package envelope) followed by its
fields in declaration order. Every field is a 4-byte big-endian length
followed by that many bytes. Text fields are UTF-8. Timestamps are
``YYYY-MM-DDThh:mm:ssZ``; weights have exactly 3 decimals, coordinates
exactly 6. Signatures are never part of the canonical bytes.
"""

from __future__ import annotations

import enum
import hashlib
import re
import struct
import unicodedata
from dataclasses import dataclass, replace
from datetime import date, datetime, timezone
from decimal import Decimal, InvalidOperation
from typing import Union


class ModelError(ValueError):
    """Base class for malformed domain values."""


class MalformedId(ModelError):
    pass


class CheckDigitMismatch(ModelError):
    pass


class UnassignableSerial(CheckDigitMismatch):
    pass


class ImoCheckDigitMismatch(ModelError):
    pass


class InvalidDate(ModelError):
    pass


class InvalidClaim(ModelError):
    pass


# --------------------------------------------------------------------------
# Parties
# --------------------------------------------------------------------------

EPSILON_TEXT = "ε"


def _check_name(value: str, what: str) -> None:
    if not isinstance(value, str) or not value:
        raise MalformedId(f"{what} must be a non-empty string")
    if any(unicodedata.category(ch) == "Cc" for ch in value):
        raise MalformedId(f"{what} contains control characters: {value!r}")


@dataclass(frozen=True, order=True)
class OperatorId:
    """An economic operator. ``EPSILON`` stands for an operator outside the system."""

    value: str

    def __post_init__(self):
        _check_name(self.value, "operator id")

    @property
    def is_epsilon(self) -> bool:
        return self.value == EPSILON_TEXT

    def __str__(self) -> str:
        return self.value


EPSILON = OperatorId(EPSILON_TEXT)


@dataclass(frozen=True, order=True)
class AgencyId:
    """A customs agency. Never equal to any OperatorId."""

    value: str

    def __post_init__(self):
        _check_name(self.value, "agency id")
        if self.value == EPSILON_TEXT:
            raise MalformedId("the epsilon symbol is reserved for operators")

    def __str__(self) -> str:
        return self.value


Party = Union[OperatorId, AgencyId]


def party_text(party: Party) -> str:
    if isinstance(party, AgencyId):
        return f"agency:{party.value}"
    if party.is_epsilon:
        return EPSILON_TEXT
    return f"operator:{party.value}"


def parse_party(text: str) -> Party:
    if text == EPSILON_TEXT:
        return EPSILON
    kind, sep, name = text.partition(":")
    if sep and kind == "agency":
        return AgencyId(name)
    if sep and kind == "operator":
        return OperatorId(name)
    raise MalformedId(f"bad party reference {text!r}")


def parse_operator(text: str) -> OperatorId:
    return EPSILON if text == EPSILON_TEXT else OperatorId(text)


# --------------------------------------------------------------------------
# ISO 6346 container numbers
# --------------------------------------------------------------------------

def _letter_values() -> dict[str, int]:
    # A=10 upward, skipping multiples of 11
    values, v = {}, 10
    for ch in "ABCDEFGHIJKLMNOPQRSTUVWXYZ":
        if v % 11 == 0:
            v += 1
        values[ch] = v
        v += 1
    return values


_LETTER_VALUES = _letter_values()
_PREFIX_RE = re.compile(r"[A-Z]{4}[0-9]{6}")


def _iso6346_remainder(prefix: str) -> int:
    if not isinstance(prefix, str) or not _PREFIX_RE.fullmatch(prefix):
        raise MalformedId(f"expected 4 uppercase letters and 6 digits, got {prefix!r}")
    total = 0
    for pos, ch in enumerate(prefix):
        value = _LETTER_VALUES[ch] if ch.isalpha() else int(ch)
        total += value << pos
    return total % 11


def iso6346_check_digit(prefix: str) -> int:
    """Check digit for a 10-character owner code + category + serial (remainder 10 gives 0)."""
    return _iso6346_remainder(prefix) % 10


def iso6346_assignable(prefix: str) -> bool:
    """False for prefixes whose remainder is 10.

    Those share check digit 0 with remainder-0 prefixes, so a one-digit
    typo could go unnoticed; the standard advises against issuing them.
    """
    return _iso6346_remainder(prefix) != 10


@dataclass(frozen=True, order=True)
class ContainerId:
    owner_code: str
    category: str
    serial: str
    check_digit: int

    def __post_init__(self):
        prefix = f"{self.owner_code}{self.category}{self.serial}"
        if (len(self.owner_code), len(self.category), len(self.serial)) != (3, 1, 6):
            raise MalformedId(f"bad container id parts: {prefix!r}")
        expected = iso6346_check_digit(prefix)
        if expected != self.check_digit:
            raise CheckDigitMismatch(
                f"{prefix}{self.check_digit}: check digit should be {expected}")
        if not iso6346_assignable(prefix):
            raise UnassignableSerial(f"{prefix}: serial yields remainder 10 and is not issued")

    @classmethod
    def from_prefix(cls, prefix: str) -> ContainerId:
        return cls(prefix[:3], prefix[3], prefix[4:10], iso6346_check_digit(prefix))

    def __str__(self) -> str:
        return f"{self.owner_code}{self.category}{self.serial}{self.check_digit}"


def parse_container_id(text: str) -> ContainerId:
    if not isinstance(text, str) or len(text) != 11:
        raise MalformedId(f"container id must be 11 characters: {text!r}")
    if not _PREFIX_RE.fullmatch(text[:10]) or text[10] not in "0123456789":
        raise MalformedId(f"container id has bad characters: {text!r}")
    return ContainerId(text[:3], text[3], text[4:10], int(text[10]))


# --------------------------------------------------------------------------
# Shipments (IMO number + departure date)
# --------------------------------------------------------------------------

def imo_check_digit(body: str) -> int:
    """Check digit for the first six digits of an IMO ship number."""
    if not isinstance(body, str) or not re.fullmatch(r"[0-9]{6}", body):
        raise MalformedId(f"IMO body must be 6 digits: {body!r}")
    return sum(int(d) * w for d, w in zip(body, (7, 6, 5, 4, 3, 2))) % 10


@dataclass(frozen=True, order=True)
class ShipmentId:
    imo_number: str
    departure_date: date

    def __post_init__(self):
        if not re.fullmatch(r"[0-9]{7}", self.imo_number):
            raise MalformedId(f"IMO number must be 7 digits: {self.imo_number!r}")
        if imo_check_digit(self.imo_number[:6]) != int(self.imo_number[6]):
            raise ImoCheckDigitMismatch(f"IMO {self.imo_number} fails its check digit")

    def __str__(self) -> str:
        return f"{self.imo_number}-{self.departure_date.isoformat()}"


_SHIPMENT_RE = re.compile(r"([0-9]{7})-([0-9]{4})-([0-9]{2})-([0-9]{2})")


def parse_shipment_id(text: str) -> ShipmentId:
    m = _SHIPMENT_RE.fullmatch(text) if isinstance(text, str) else None
    if not m:
        raise MalformedId(f"shipment id must look like NNNNNNN-YYYY-MM-DD: {text!r}")
    try:
        day = date(int(m[2]), int(m[3]), int(m[4]))
    except ValueError as exc:
        raise InvalidDate(f"{text!r}: {exc}") from None
    return ShipmentId(m[1], day)


# --------------------------------------------------------------------------
# Time, place, weight
# --------------------------------------------------------------------------

def normalize_time(value: datetime) -> datetime:
    """UTC, second precision. Naive datetimes are taken to be UTC already."""
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(value: datetime) -> str:
    return normalize_time(value).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    try:
        return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    except (TypeError, ValueError):
        raise InvalidDate(f"timestamp must be YYYY-MM-DDThh:mm:ssZ: {text!r}") from None


_GRAMS = Decimal("0.001")


def normalize_weight(value) -> Decimal:
    try:
        weight = Decimal(str(value)) if not isinstance(value, Decimal) else value
        weight = weight.quantize(_GRAMS)
    except (InvalidOperation, ValueError):
        raise InvalidClaim(f"bad weight {value!r}") from None
    if not weight.is_finite() or weight < 0:
        raise InvalidClaim(f"weight must be non-negative, got {value!r}")
    return weight


@dataclass(frozen=True)
class GeoLocation:
    latitude: float
    longitude: float

    def __post_init__(self):
        lat, lon = float(self.latitude), float(self.longitude)
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise InvalidClaim(f"location out of range: ({lat}, {lon})")
        # fixed 6-decimal precision keeps text round trips exact
        object.__setattr__(self, "latitude", float(f"{lat:.6f}"))
        object.__setattr__(self, "longitude", float(f"{lon:.6f}"))

    def as_text(self) -> tuple[str, str]:
        return f"{self.latitude:.6f}", f"{self.longitude:.6f}"

    @property
    def is_valid(self) -> bool:
        return -90.0 <= self.latitude <= 90.0 and -180.0 <= self.longitude <= 180.0


# --------------------------------------------------------------------------
# Claims
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    scheme: str
    value: bytes

    def to_record(self) -> dict:
        return {"scheme": self.scheme, "value": self.value.hex()}

    @classmethod
    def from_record(cls, rec: dict) -> Signature:
        return cls(rec["scheme"], bytes.fromhex(rec["value"]))


@dataclass(frozen=True)
class ContainerClaim:
    """``from_`` handed ``container`` to ``to``; signed by one of them or by customs."""

    container: ContainerId
    shipment: ShipmentId
    from_: OperatorId
    to: OperatorId
    time: datetime
    location: GeoLocation
    weight_kg: Decimal
    signer: Party
    signature: Signature | None = None

    def __post_init__(self):
        object.__setattr__(self, "time", normalize_time(self.time))
        object.__setattr__(self, "weight_kg", normalize_weight(self.weight_kg))
        if not isinstance(self.from_, OperatorId) or not isinstance(self.to, OperatorId):
            raise InvalidClaim("from and to must be operators")
        if self.from_ == self.to:
            raise InvalidClaim(f"from and to are both {self.from_}")
        if isinstance(self.signer, OperatorId):
            if self.signer.is_epsilon:
                raise InvalidClaim("epsilon cannot sign")
            if self.signer not in (self.from_, self.to):
                raise InvalidClaim(f"signer {self.signer} is neither from nor to")
        elif not isinstance(self.signer, AgencyId):
            raise InvalidClaim(f"bad signer {self.signer!r}")

    @property
    def is_customs(self) -> bool:
        return isinstance(self.signer, AgencyId)

    @property
    def involves_epsilon(self) -> bool:
        return self.from_.is_epsilon or self.to.is_epsilon

    def signed(self, signature: Signature) -> ContainerClaim:
        return replace(self, signature=signature)

    def __str__(self) -> str:
        return f"{self.from_} -[{self.container}]-> {self.to} | {self.signer}"


class PackageAction(str, enum.Enum):
    INSERT = "INSERT"
    REMOVE = "REMOVE"


@dataclass(frozen=True)
class PackageClaim:
    container: ContainerId
    package_id: str
    sender: str
    receiver: str
    time: datetime
    location: GeoLocation
    weight_kg: Decimal
    action: PackageAction
    contents: str

    def __post_init__(self):
        object.__setattr__(self, "time", normalize_time(self.time))
        object.__setattr__(self, "weight_kg", normalize_weight(self.weight_kg))
        try:
            object.__setattr__(self, "action", PackageAction(self.action))
        except ValueError:
            raise InvalidClaim(f"action must be INSERT or REMOVE, got {self.action!r}") from None
        if not isinstance(self.package_id, str) or not self.package_id:
            raise InvalidClaim("package_id must be non-empty")


@dataclass(frozen=True)
class PackageClaimEnvelope:
    """Encrypted package claim. Only ``destination_agency`` is readable in the clear."""

    destination_agency: AgencyId
    ciphertext: bytes
    signer: OperatorId
    signature: Signature | None = None

    def __post_init__(self):
        if not isinstance(self.signer, OperatorId) or self.signer.is_epsilon:
            raise InvalidClaim("envelopes are signed by a real operator")
        if not isinstance(self.destination_agency, AgencyId):
            raise InvalidClaim("destination must be an agency")

    def signed(self, signature: Signature) -> PackageClaimEnvelope:
        return replace(self, signature=signature)


Claim = Union[ContainerClaim, PackageClaimEnvelope]


# --------------------------------------------------------------------------
# Canonical bytes
# --------------------------------------------------------------------------

TAG_CONTAINER = b"FCC\x01"
TAG_PACKAGE = b"FCP\x01"
TAG_ENVELOPE = b"FCE\x01"


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def encode_fields(tag: bytes, *items) -> bytes:
    out = [tag]
    for item in items:
        out.append(_lp(item if isinstance(item, bytes) else str(item).encode("utf-8")))
    return b"".join(out)


def canonical_bytes(claim) -> bytes:
    """Deterministic encoding of a claim without its signature."""
    if isinstance(claim, ContainerClaim):
        lat, lon = claim.location.as_text()
        return encode_fields(TAG_CONTAINER, str(claim.container), str(claim.shipment),
                             claim.from_.value, claim.to.value, format_timestamp(claim.time),
                             lat, lon, f"{claim.weight_kg:.3f}", party_text(claim.signer))
    if isinstance(claim, PackageClaim):
        lat, lon = claim.location.as_text()
        return encode_fields(TAG_PACKAGE, str(claim.container), claim.package_id, claim.sender,
                             claim.receiver, format_timestamp(claim.time), lat, lon,
                             f"{claim.weight_kg:.3f}", claim.action.value, claim.contents)
    if isinstance(claim, PackageClaimEnvelope):
        return encode_fields(TAG_ENVELOPE, claim.destination_agency.value, claim.ciphertext,
                             party_text(claim.signer))
    raise TypeError(f"no canonical encoding for {type(claim).__name__}")


def split_fields(data: bytes) -> list[bytes]:
    out, pos = [], 4
    while pos < len(data):
        if pos + 4 > len(data):
            raise InvalidClaim("truncated canonical encoding")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise InvalidClaim("truncated canonical encoding")
        out.append(data[pos:pos + n])
        pos += n
    return out


def decode_canonical(data: bytes):
    """Inverse of :func:`canonical_bytes` (the result carries no signature)."""
    tag = data[:4]
    f = split_fields(data)
    try:
        if tag == TAG_CONTAINER and len(f) == 9:
            t = [x.decode("utf-8") for x in f]
            return ContainerClaim(
                parse_container_id(t[0]), parse_shipment_id(t[1]), parse_operator(t[2]),
                parse_operator(t[3]), parse_timestamp(t[4]), GeoLocation(float(t[5]), float(t[6])),
                Decimal(t[7]), parse_party(t[8]))
        if tag == TAG_PACKAGE and len(f) == 10:
            t = [x.decode("utf-8") for x in f]
            return PackageClaim(
                parse_container_id(t[0]), t[1], t[2], t[3], parse_timestamp(t[4]),
                GeoLocation(float(t[5]), float(t[6])), Decimal(t[7]), PackageAction(t[8]), t[9])
        if tag == TAG_ENVELOPE and len(f) == 3:
            signer = parse_party(f[2].decode("utf-8"))
            return PackageClaimEnvelope(AgencyId(f[0].decode("utf-8")), f[1], signer)
    except (UnicodeDecodeError, ValueError) as exc:
        raise InvalidClaim(f"undecodable claim: {exc}") from None
    raise InvalidClaim(f"unknown claim tag {tag!r} with {len(f)} fields")


def claim_id(claim) -> str:
    """SHA-256 hex digest of the canonical bytes; signatures do not contribute."""
    return hashlib.sha256(canonical_bytes(claim)).hexdigest()


# --------------------------------------------------------------------------
# Structured records (ledger and scenario files)
# --------------------------------------------------------------------------

def claim_to_record(claim: Claim) -> dict:
    sig = claim.signature.to_record() if claim.signature is not None else None
    if isinstance(claim, ContainerClaim):
        lat, lon = claim.location.as_text()
        return {
            "type": "container",
            "container": str(claim.container),
            "shipment": str(claim.shipment),
            "from": claim.from_.value,
            "to": claim.to.value,
            "time": format_timestamp(claim.time),
            "location": [lat, lon],
            "weight_kg": f"{claim.weight_kg:.3f}",
            "signer": party_text(claim.signer),
            "signature": sig,
        }
    if isinstance(claim, PackageClaimEnvelope):
        return {
            "type": "package",
            "destination": claim.destination_agency.value,
            "ciphertext": claim.ciphertext.hex(),
            "signer": party_text(claim.signer),
            "signature": sig,
        }
    raise TypeError(f"cannot record {type(claim).__name__}")


def claim_from_record(rec: dict) -> Claim:
    sig = Signature.from_record(rec["signature"]) if rec.get("signature") else None
    if rec["type"] == "container":
        lat, lon = rec["location"]
        return ContainerClaim(
            container=parse_container_id(rec["container"]),
            shipment=parse_shipment_id(rec["shipment"]),
            from_=parse_operator(rec["from"]),
            to=parse_operator(rec["to"]),
            time=parse_timestamp(rec["time"]),
            location=GeoLocation(float(lat), float(lon)),
            weight_kg=Decimal(rec["weight_kg"]),
            signer=parse_party(rec["signer"]),
            signature=sig,
        )
    if rec["type"] == "package":
        signer = parse_party(rec["signer"])
        return PackageClaimEnvelope(AgencyId(rec["destination"]),
                                    bytes.fromhex(rec["ciphertext"]), signer, sig)
    raise InvalidClaim(f"unknown claim record type {rec.get('type')!r}")


class Reason(str, enum.Enum):
    """Stable machine-readable rejection codes."""

    BAD_SIGNATURE = "BAD_SIGNATURE"
    REVOKED_CERTIFICATE = "REVOKED_CERTIFICATE"
    SUBJECT_MISMATCH = "SUBJECT_MISMATCH"
    BAD_CERTIFICATE = "BAD_CERTIFICATE"
    IMPOSSIBLE_DATA = "IMPOSSIBLE_DATA"
    NO_TRUSTED_PREDECESSOR = "NO_TRUSTED_PREDECESSOR"
    UNKNOWN_DESTINATION_AGENCY = "UNKNOWN_DESTINATION_AGENCY"

    def __str__(self) -> str:
        return self.value
