"""Keys, signatures, certificates, revocation and package encryption.

Two real schemes are supported, ``ed25519`` for signatures and
``x25519-hkdf-sha256-aesgcm`` for package envelopes. ``mock-hmac-sha256``
is a deterministic stand-in for tests; its public and private keys are the
same bytes, so it gives no security at all.

Binary file layouts (all integers big-endian, ``lp`` = u32 length + bytes):

* key file: ``b"FCKEY" 0x01 lp(scheme) lp(owner) lp(public) lp(private)``
* certificate file: ``b"FCCRT" 0x01 lp(body) lp(sig scheme) lp(sig bytes)``
  where ``body`` is :func:`certificate_body`.

A CRL file is newline-delimited JSON: a header record
``{"format": "freightchain-crl", "issuer": ..., "version": 1}`` and then one
``{"crl_version": n, "serial": s}`` record per revocation, only ever appended.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import os
import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .model import (
    AgencyId,
    InvalidClaim,
    OperatorId,
    PackageClaim,
    PackageClaimEnvelope,
    Party,
    Reason,
    Signature,
    canonical_bytes,
    claim_id,
    decode_canonical,
    encode_fields,
    format_timestamp,
    parse_party,
    parse_timestamp,
    party_text,
    split_fields,
)

ED25519 = "ed25519"
X25519 = "x25519-hkdf-sha256-aesgcm"
MOCK = "mock-hmac-sha256"

SIGNATURE_SCHEMES = (ED25519, MOCK)
ENCRYPTION_SCHEMES = (X25519,)

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


class IdentityError(Exception):
    pass


class UnsupportedScheme(IdentityError):
    pass


class NotACustomsAgency(IdentityError):
    pass


class EncryptionFailure(IdentityError):
    pass


class DecryptionFailure(IdentityError):
    pass


class DuplicateBallot(IdentityError):
    pass


class NonMemberBallot(IdentityError):
    pass


class KeyFileError(IdentityError):
    pass


# --------------------------------------------------------------------------
# Keys and signatures
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    scheme: str
    public_key: bytes
    private_key: bytes = field(repr=False)


def generate_keypair(scheme: str = ED25519, seed: bytes | None = None) -> KeyPair:
    """Fresh key pair. A 32-byte ``seed`` makes the result reproducible."""
    if seed is not None and len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    secret = seed if seed is not None else os.urandom(32)
    if scheme == ED25519:
        key = Ed25519PrivateKey.from_private_bytes(secret)
        return KeyPair(scheme, key.public_key().public_bytes(**_RAW), secret)
    if scheme == X25519:
        key = X25519PrivateKey.from_private_bytes(secret)
        return KeyPair(scheme, key.public_key().public_bytes(**_RAW), secret)
    if scheme == MOCK:
        return KeyPair(scheme, secret, secret)
    raise UnsupportedScheme(scheme)


def sign(keys: KeyPair, message: bytes) -> Signature:
    if keys.scheme == ED25519:
        value = Ed25519PrivateKey.from_private_bytes(keys.private_key).sign(message)
    elif keys.scheme == MOCK:
        value = hmac.new(keys.private_key, message, hashlib.sha256).digest()
    else:
        raise UnsupportedScheme(f"{keys.scheme} cannot sign")
    return Signature(keys.scheme, value)


def verify(public_key: bytes, scheme: str, message: bytes, signature: Signature | None) -> bool:
    if signature is None or signature.scheme != scheme:
        return False
    if scheme == ED25519:
        if len(signature.value) != 64:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature.value, message)
        except (InvalidSignature, ValueError):
            return False
        return True
    if scheme == MOCK:
        expected = hmac.new(public_key, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature.value)
    return False


def sign_claim(claim, keys: KeyPair):
    """Return ``claim`` carrying a signature over its canonical bytes."""
    return claim.signed(sign(keys, canonical_bytes(claim)))


# --------------------------------------------------------------------------
# Certificates and revocation
# --------------------------------------------------------------------------

class Role(str, enum.Enum):
    OPERATOR = "OPERATOR"
    CUSTOMS = "CUSTOMS"


TAG_CERTIFICATE = b"FCT\x01"


@dataclass(frozen=True)
class Certificate:
    subject: Party
    role: Role
    issuer: AgencyId
    subject_public_key: bytes
    key_scheme: str
    serial: int
    issued_at: datetime
    issuer_signature: Signature | None = None


def certificate_body(cert: Certificate) -> bytes:
    return encode_fields(TAG_CERTIFICATE, party_text(cert.subject), cert.role.value,
                         cert.issuer.value, cert.subject_public_key, cert.key_scheme,
                         str(cert.serial), format_timestamp(cert.issued_at))


def _certificate_from_body(body: bytes, signature: Signature | None) -> Certificate:
    if body[:4] != TAG_CERTIFICATE:
        raise KeyFileError("not a certificate body")
    f = split_fields(body)
    if len(f) != 7:
        raise KeyFileError("certificate body has wrong field count")
    return Certificate(
        subject=parse_party(f[0].decode()),
        role=Role(f[1].decode()),
        issuer=AgencyId(f[2].decode()),
        subject_public_key=f[3],
        key_scheme=f[4].decode(),
        serial=int(f[5]),
        issued_at=parse_timestamp(f[6].decode()),
        issuer_signature=signature,
    )


def issue_certificate(ca_agency, ca_keys: KeyPair, subject: Party, role: Role,
                      subject_public_key: bytes, *, serial: int,
                      key_scheme: str = ED25519,
                      issued_at: datetime | None = None) -> Certificate:
    if not isinstance(ca_agency, AgencyId):
        raise NotACustomsAgency(f"{ca_agency} cannot issue certificates")
    role = Role(role)
    if role is Role.OPERATOR and not (isinstance(subject, OperatorId) and not subject.is_epsilon):
        raise ValueError("operator certificates need a real operator subject")
    if role is Role.CUSTOMS and not isinstance(subject, AgencyId):
        raise ValueError("customs certificates need an agency subject")
    when = issued_at or datetime(1970, 1, 1, tzinfo=timezone.utc)
    cert = Certificate(subject, role, ca_agency, subject_public_key, key_scheme, serial, when)
    return replace(cert, issuer_signature=sign(ca_keys, certificate_body(cert)))


def verify_certificate(cert: Certificate, issuer_public_key: bytes, issuer_scheme: str) -> bool:
    return verify(issuer_public_key, issuer_scheme, certificate_body(cert), cert.issuer_signature)


@dataclass(frozen=True)
class RevocationList:
    """Revoked serials of one issuer. ``entries`` holds ``(version, serial)`` in order."""

    issuer: AgencyId
    entries: tuple[tuple[int, int], ...] = ()

    @property
    def version(self) -> int:
        return self.entries[-1][0] if self.entries else 0

    @property
    def revoked_serials(self) -> frozenset[int]:
        return frozenset(serial for _, serial in self.entries)

    def at_version(self, version: int) -> frozenset[int]:
        return frozenset(serial for v, serial in self.entries if v <= version)

    def __contains__(self, serial: int) -> bool:
        return any(s == serial for _, s in self.entries)


def revoke_certificate(crl: RevocationList, serial: int) -> RevocationList:
    # re-revoking is recorded too; membership is unchanged but the version moves on
    return RevocationList(crl.issuer, crl.entries + ((crl.version + 1, serial),))


def verify_claim_signature(claim, certificate: Certificate, crl: RevocationList | frozenset,
                           issuer_public_key: bytes, issuer_scheme: str = ED25519
                           ) -> Reason | None:
    """``None`` when the claim is acceptable under ``certificate``, else the reason."""
    if claim.signer != certificate.subject:
        return Reason.SUBJECT_MISMATCH
    if not verify_certificate(certificate, issuer_public_key, issuer_scheme):
        return Reason.BAD_CERTIFICATE
    revoked = crl.revoked_serials if isinstance(crl, RevocationList) else crl
    if certificate.serial in revoked:
        return Reason.REVOKED_CERTIFICATE
    if not verify(certificate.subject_public_key, certificate.key_scheme,
                  canonical_bytes(claim), claim.signature):
        return Reason.BAD_SIGNATURE
    return None


class CertificateAuthority:
    """Certificate issuance and revocation for one customs agency.

    Single writer: the serial counter and CRL are only touched through
    :meth:`issue` and :meth:`revoke`.
    """

    def __init__(self, agency: AgencyId, keys: KeyPair, *, first_serial: int = 1):
        if not isinstance(agency, AgencyId):
            raise NotACustomsAgency(f"{agency} is not a customs agency")
        self.agency = agency
        self.keys = keys
        self._next_serial = first_serial
        self.crl = RevocationList(agency)
        self.self_certificate = self.issue(agency, Role.CUSTOMS, keys.public_key,
                                           key_scheme=keys.scheme)

    def issue(self, subject: Party, role: Role, public_key: bytes, *,
              key_scheme: str = ED25519, issued_at: datetime | None = None) -> Certificate:
        cert = issue_certificate(self.agency, self.keys, subject, role, public_key,
                                 serial=self._next_serial, key_scheme=key_scheme,
                                 issued_at=issued_at)
        self._next_serial += 1
        return cert

    def revoke(self, serial: int) -> RevocationList:
        self.crl = revoke_certificate(self.crl, serial)
        return self.crl


# --------------------------------------------------------------------------
# Trust store
# --------------------------------------------------------------------------

class TrustStore:
    """What one node believes: customs members, known certificates and CRLs."""

    def __init__(self, certificates: Iterable[Certificate] = (),
                 members: Iterable[AgencyId] | None = None,
                 crls: Iterable[RevocationList] = ()):
        self._certs: dict[Party, list[Certificate]] = {}
        self._agency_certs: dict[AgencyId, Certificate] = {}
        self._crls: dict[AgencyId, RevocationList] = {}
        self._sig_cache: dict[tuple, bool] = {}
        for cert in certificates:
            self.add_certificate(cert)
        if members is None:
            members = list(self._agency_certs)
        self.members: frozenset[AgencyId] = frozenset(members)
        for crl in crls:
            self.apply_crl(crl)

    def add_certificate(self, cert: Certificate) -> None:
        if cert.role is Role.CUSTOMS and cert.issuer == cert.subject:
            self._agency_certs[cert.subject] = cert
        self._certs.setdefault(cert.subject, []).append(cert)

    def certificates(self) -> list[Certificate]:
        return [c for certs in self._certs.values() for c in certs]

    def certificates_for(self, party: Party) -> list[Certificate]:
        return list(self._certs.get(party, ()))

    def certificate_for(self, party: Party) -> Certificate | None:
        certs = self._certs.get(party)
        return certs[-1] if certs else None

    def crl(self, issuer: AgencyId) -> RevocationList:
        return self._crls.get(issuer) or RevocationList(issuer)

    def crls(self) -> list[RevocationList]:
        return [self._crls[k] for k in sorted(self._crls)]

    def apply_crl(self, crl: RevocationList) -> bool:
        """Adopt ``crl`` if it is newer than what we hold. Returns True on change."""
        if crl.version > self.crl(crl.issuer).version:
            self._crls[crl.issuer] = crl
            return True
        return False

    def crl_versions(self) -> dict[str, int]:
        return {k.value: v.version for k, v in sorted(self._crls.items()) if v.version}

    def is_live(self, party: Party) -> bool:
        cert = self.certificate_for(party)
        return cert is not None and cert.serial not in self.crl(cert.issuer) \
            and cert.issuer in self.members

    def set_members(self, members: Iterable[AgencyId]) -> None:
        self.members = frozenset(members)

    def _signature_ok(self, claim, cid: str, cert: Certificate) -> bool:
        key = (cid, claim.signature.value if claim.signature else b"", cert.serial, cert.issuer)
        ok = self._sig_cache.get(key)
        if ok is None:
            ok = verify(cert.subject_public_key, cert.key_scheme, canonical_bytes(claim),
                        claim.signature)
            self._sig_cache[key] = ok
        return ok

    def check(self, claim, crl_versions: Mapping[str, int] | None = None) -> Reason | None:
        """Signature, certificate chain, membership and revocation checks.

        With ``crl_versions`` the revocation lists are read as they stood at
        those versions, which is how committed blocks are replayed.
        """
        certs = self._certs.get(claim.signer)
        if not certs:
            return Reason.BAD_CERTIFICATE
        cid = claim_id(claim)
        cert = next((c for c in reversed(certs) if self._signature_ok(claim, cid, c)), None)
        if cert is None:
            return Reason.BAD_SIGNATURE
        expected_role = Role.CUSTOMS if isinstance(claim.signer, AgencyId) else Role.OPERATOR
        if cert.role is not expected_role or cert.issuer not in self.members:
            return Reason.BAD_CERTIFICATE
        if isinstance(claim.signer, AgencyId) and claim.signer not in self.members:
            return Reason.BAD_CERTIFICATE
        anchor = self._agency_certs.get(cert.issuer)
        if anchor is None or not self._anchor_ok(cert, anchor):
            return Reason.BAD_CERTIFICATE
        crl = self.crl(cert.issuer)
        if crl_versions is None:
            revoked = cert.serial in crl
        else:
            revoked = cert.serial in crl.at_version(crl_versions.get(cert.issuer.value, 0))
        if revoked:
            return Reason.REVOKED_CERTIFICATE
        return None

    def _anchor_ok(self, cert: Certificate, anchor: Certificate) -> bool:
        key = ("cert", cert.issuer, cert.serial)
        ok = self._sig_cache.get(key)
        if ok is None:
            ok = verify_certificate(cert, anchor.subject_public_key, anchor.key_scheme)
            self._sig_cache[key] = ok
        return ok

    def copy(self) -> TrustStore:
        other = TrustStore(self.certificates(), self.members, self.crls())
        other._sig_cache = self._sig_cache
        return other


# --------------------------------------------------------------------------
# Package envelopes
# --------------------------------------------------------------------------

_HKDF_INFO = b"freightchain package envelope v1"


def _derive_key(shared: bytes, ephemeral_public: bytes, recipient_public: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None,
                info=_HKDF_INFO + ephemeral_public + recipient_public).derive(shared)


def encrypt_package_claim(plain: PackageClaim, destination: AgencyId,
                          destination_public_key: bytes, signer: OperatorId, *,
                          ephemeral_seed: bytes | None = None) -> PackageClaimEnvelope:
    """Encrypt for ``destination`` only. The result still needs :func:`sign_claim`.

    The ciphertext is ``ephemeral public key (32) || nonce (12) || AES-GCM``
    with the destination agency id bound as associated data.
    """
    try:
        recipient = X25519PublicKey.from_public_bytes(destination_public_key)
        secret = ephemeral_seed if ephemeral_seed is not None else os.urandom(32)
        ephemeral = X25519PrivateKey.from_private_bytes(secret)
        eph_pub = ephemeral.public_key().public_bytes(**_RAW)
        key = _derive_key(ephemeral.exchange(recipient), eph_pub, destination_public_key)
        nonce = hashlib.sha256(secret + b"nonce").digest()[:12]
        body = AESGCM(key).encrypt(nonce, canonical_bytes(plain),
                                   destination.value.encode("utf-8"))
    except (ValueError, TypeError) as exc:
        raise EncryptionFailure(str(exc)) from None
    return PackageClaimEnvelope(destination, eph_pub + nonce + body, signer)


def decrypt_package_claim(envelope: PackageClaimEnvelope, private_key) -> PackageClaim:
    secret = private_key.private_key if isinstance(private_key, KeyPair) else private_key
    data = envelope.ciphertext
    if len(data) < 32 + 12 + 16:
        raise DecryptionFailure("ciphertext too short")
    try:
        me = X25519PrivateKey.from_private_bytes(secret)
        my_pub = me.public_key().public_bytes(**_RAW)
        eph_pub, nonce, body = data[:32], data[32:44], data[44:]
        key = _derive_key(me.exchange(X25519PublicKey.from_public_bytes(eph_pub)), eph_pub, my_pub)
        plain = AESGCM(key).decrypt(nonce, body, envelope.destination_agency.value.encode("utf-8"))
        claim = decode_canonical(plain)
    except (InvalidTag, ValueError, TypeError, InvalidClaim):
        raise DecryptionFailure("envelope does not open with this key") from None
    if not isinstance(claim, PackageClaim):
        raise DecryptionFailure("envelope does not hold a package claim")
    return claim


# --------------------------------------------------------------------------
# Customs membership votes
# --------------------------------------------------------------------------

class MembershipAction(str, enum.Enum):
    ADD = "ADD"
    REMOVE = "REMOVE"


class MembershipProposal(NamedTuple):
    action: MembershipAction
    agency: AgencyId


class VoteResult(NamedTuple):
    accepted: bool
    members: frozenset


def vote_membership(voters: Iterable[AgencyId], proposal: MembershipProposal,
                    ballots: Mapping[AgencyId, bool] | Iterable[tuple[AgencyId, bool]]
                    ) -> VoteResult:
    """Strict-majority vote among the current members on adding or removing an agency."""
    members = frozenset(voters)
    pairs = ballots.items() if isinstance(ballots, Mapping) else ballots
    seen: dict[AgencyId, bool] = {}
    for agency, yes in pairs:
        if agency not in members:
            raise NonMemberBallot(str(agency))
        if agency in seen:
            raise DuplicateBallot(str(agency))
        seen[agency] = bool(yes)
    accepted = 2 * sum(seen.values()) > len(members)
    if not accepted:
        return VoteResult(False, members)
    if MembershipAction(proposal.action) is MembershipAction.ADD:
        return VoteResult(True, members | {proposal.agency})
    return VoteResult(True, members - {proposal.agency})


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

_KEY_MAGIC = b"FCKEY\x01"
_CERT_MAGIC = b"FCCRT\x01"


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _read_lp(data: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 4 > len(data):
        raise KeyFileError("truncated file")
    (n,) = struct.unpack_from(">I", data, pos)
    if pos + 4 + n > len(data):
        raise KeyFileError("truncated file")
    return data[pos + 4:pos + 4 + n], pos + 4 + n


def _read_records(data: bytes, magic: bytes, count: int) -> list[bytes]:
    if not data.startswith(magic):
        raise KeyFileError("bad magic header or unsupported version")
    out, pos = [], len(magic)
    for _ in range(count):
        item, pos = _read_lp(data, pos)
        out.append(item)
    if pos != len(data):
        raise KeyFileError("trailing bytes")
    return out


def dump_keypair(keys: KeyPair, owner: str = "") -> bytes:
    return _KEY_MAGIC + b"".join(_lp(x) for x in (
        keys.scheme.encode(), owner.encode("utf-8"), keys.public_key, keys.private_key))


def load_keypair(data: bytes) -> tuple[KeyPair, str]:
    scheme, owner, public, private = _read_records(data, _KEY_MAGIC, 4)
    return KeyPair(scheme.decode(), public, private), owner.decode("utf-8")


def dump_certificate(cert: Certificate) -> bytes:
    sig = cert.issuer_signature or Signature("", b"")
    return _CERT_MAGIC + _lp(certificate_body(cert)) + _lp(sig.scheme.encode()) + _lp(sig.value)


def load_certificate(data: bytes) -> Certificate:
    body, scheme, value = _read_records(data, _CERT_MAGIC, 3)
    sig = Signature(scheme.decode(), value) if scheme else None
    return _certificate_from_body(body, sig)


def write_keypair(path, keys: KeyPair, owner: str = "") -> None:
    Path(path).write_bytes(dump_keypair(keys, owner))


def read_keypair(path) -> tuple[KeyPair, str]:
    return load_keypair(Path(path).read_bytes())


def write_certificate(path, cert: Certificate) -> None:
    Path(path).write_bytes(dump_certificate(cert))


def read_certificate(path) -> Certificate:
    return load_certificate(Path(path).read_bytes())


def write_crl(path, crl: RevocationList) -> None:
    """Write ``crl`` from scratch; use :func:`append_crl_record` to extend."""
    lines = [json.dumps({"format": "freightchain-crl", "issuer": crl.issuer.value,
                         "version": 1}, sort_keys=True)]
    lines += [json.dumps({"crl_version": v, "serial": s}, sort_keys=True) for v, s in crl.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def append_crl_record(path, version: int, serial: int) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"crl_version": version, "serial": serial}, sort_keys=True) + "\n")


def read_crl(path) -> RevocationList:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        header = json.loads(lines[0])
        if header.get("format") != "freightchain-crl":
            raise KeyFileError(f"{path}: not a CRL file")
        entries = []
        for line in lines[1:]:
            rec = json.loads(line)
            entries.append((int(rec["crl_version"]), int(rec["serial"])))
    except (IndexError, ValueError, KeyError) as exc:
        raise KeyFileError(f"{path}: {exc}") from None
    if [v for v, _ in entries] != list(range(1, len(entries) + 1)):
        raise KeyFileError(f"{path}: CRL versions are not contiguous")
    return RevocationList(AgencyId(header["issuer"]), tuple(entries))
