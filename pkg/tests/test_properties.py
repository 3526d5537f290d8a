import random
from datetime import timedelta
from decimal import Decimal

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from freightchain.ledger import Ledger, loads, make_block, reset
from freightchain.model import (
    GeoLocation,
    canonical_bytes,
    claim_from_record,
    claim_id,
    claim_to_record,
    decode_canonical,
)
from oracle import random_sequence, reference_accepts
from support import T0, dedupe, production_accepts

common = settings(max_examples=300, deadline=None,
                  suppress_health_check=[HealthCheck.function_scoped_fixture])


@common
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_validator_matches_reference(world, seed):
    seq = dedupe(random_sequence(random.Random(seed)))
    assert production_accepts(world, seq) == reference_accepts(seq), f"seed {seed}"


claims = st.builds(
    lambda x, y, minutes, w, lat, lon: (x, y, minutes, w, GeoLocation(lat, lon)),
    st.sampled_from(["A", "X", "Y", "ε"]), st.sampled_from(["Z", "W", "ε"]),
    st.integers(0, 10**6),
    st.decimals(min_value=Decimal("0.001"), max_value=Decimal("99999"), places=3),
    st.floats(-90, 90, allow_nan=False), st.floats(-180, 180, allow_nan=False))


def build(world, params):
    x, y, minutes, w, loc = params
    if x == y == "ε":
        x = "A"
    signer = x if x != "ε" else y
    return world.claim(x, y, signer, minutes=minutes, weight=w, location=loc)


@common
@given(claims)
def test_record_round_trip(world, params):
    c = build(world, params)
    assert claim_from_record(claim_to_record(c)) == c
    assert claim_id(claim_from_record(claim_to_record(c))) == claim_id(c)


@common
@given(claims)
def test_canonical_round_trip(world, params):
    c = build(world, params)
    again = decode_canonical(canonical_bytes(c))
    assert canonical_bytes(again) == canonical_bytes(c)


@common
@given(st.lists(st.sampled_from(["A", "X", "Y", "Z", "W"]), min_size=1, max_size=6))
def test_ledger_text_round_trip(world, holders):
    led = Ledger()
    for i, h in enumerate(holders):
        led.append_block(make_block(led.tip, [reset(world.reset(h, minutes=i))],
                                    T0 + timedelta(minutes=i), {"NL": i % 2}))
    assert loads(led.dumps()).dumps() == led.dumps()
