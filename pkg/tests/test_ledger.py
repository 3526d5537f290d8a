import io
from datetime import timedelta

import pytest

from freightchain.ledger import (
    ZERO_HASH,
    Block,
    CorruptLedger,
    HashChainMismatch,
    HeightMismatch,
    Ledger,
    TruncatedFile,
    TxKind,
    genesis_block,
    load,
    loads,
    make_block,
    reset,
    transfer,
)
from support import C1, C2, T0


def small_ledger(world):
    led = Ledger()
    txs = [reset(world.reset("A")), reset(world.reset("X", container=C2))]
    led.append_block(make_block(led.tip, txs, T0))
    pair = transfer(world.claim("A", "Y", "Y", minutes=5), world.claim("A", "Y", "A", minutes=5))
    led.append_block(make_block(led.tip, [pair], T0 + timedelta(minutes=6)))
    return led


def test_genesis():
    g = genesis_block()
    assert g.height == 0 and g.prev_hash == ZERO_HASH and g.transactions == ()
    assert Ledger().height == 0 and Ledger().tip == g


def test_transfer_orders_giver_first(world):
    tx = transfer(world.claim("A", "Y", "Y"), world.claim("A", "Y", "A"))
    assert [c.signer for c in tx.claims] == [world["A"], world["Y"]]
    assert tx.kind is TxKind.TRANSFER and tx.from_ == world["A"] and tx.to == world["Y"]


def test_make_block_sorts_by_tx_id(world):
    txs = [reset(world.reset("A")), reset(world.reset("X", container=C2))]
    b1 = make_block(genesis_block(), txs, T0)
    b2 = make_block(genesis_block(), list(reversed(txs)), T0)
    assert b1 == b2 and b1.block_hash == b2.block_hash
    assert [t.tx_id for t in b1.transactions] == sorted(t.tx_id for t in txs)


def test_index(world):
    led = small_ledger(world)
    assert led.height == 2
    assert led.latest_claim(C1).to == world["Y"]
    assert [t.kind for t in led.container_history(C1)] == [TxKind.RESET, TxKind.TRANSFER]
    assert [t.accepted_at for t in led.container_history(C1)] == [1, 2]
    assert led.containers() == sorted([C1, C2])
    assert all(led.is_committed(cid) for tx in led.transactions() for cid in tx.claim_ids)
    latest, history = led.rebuild_index()
    assert (latest, history) == led.index_snapshot()


def test_append_rejects_bad_blocks(world):
    led = small_ledger(world)
    with pytest.raises(HeightMismatch):
        led.append_block(make_block(led.blocks[0], [], T0))
    wrong_parent = Block(3, "ab" * 32, T0, ())
    with pytest.raises(HashChainMismatch):
        led.append_block(wrong_parent)
    good = make_block(led.tip, [], T0)
    tampered = Block(good.height, good.prev_hash, good.time, good.transactions, {"NL": 1},
                     good.block_hash)
    with pytest.raises(HashChainMismatch):
        led.append_block(tampered)


def test_round_trip_is_byte_identical(world, tmp_path):
    led = small_ledger(world)
    text = led.dumps()
    assert text.count("\n") == 3 and text.endswith("\n")
    again = loads(text)
    assert again == led and again.dumps() == text
    led.persist(tmp_path / "l.jsonl")
    assert load(tmp_path / "l.jsonl").dumps() == text
    buf = io.BytesIO()
    led.persist(buf)
    assert load(io.BytesIO(buf.getvalue())).dumps() == text


def test_empty_file_is_genesis():
    assert loads(b"").height == 0


def test_truncated(world):
    text = small_ledger(world).dumps()
    with pytest.raises(TruncatedFile):
        loads(text[:-1])
    with pytest.raises(CorruptLedger):
        loads(text[: len(text) // 2])


def test_flipped_byte_is_caught(world):
    text = small_ledger(world).dumps()
    i = text.index('"weight_kg":"1000.000"') + len('"weight_kg":"')
    with pytest.raises(CorruptLedger):
        loads(text[:i] + "2" + text[i + 1:])


def test_non_canonical_line(world):
    lines = small_ledger(world).dumps().splitlines()
    lines[1] = lines[1].replace(",", ", ", 1)
    with pytest.raises(CorruptLedger):
        loads("\n".join(lines) + "\n")


def test_reordered_blocks(world):
    lines = small_ledger(world).dumps().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    with pytest.raises(CorruptLedger):
        loads("\n".join(lines) + "\n")


def test_not_utf8():
    with pytest.raises(CorruptLedger):
        loads(b"\xff\xfe\n")
