import json
from dataclasses import replace

import pytest

from freightchain.cli import main
from freightchain.identity import ED25519, generate_keypair, read_keypair, sign_claim
from freightchain.ledger import TxKind, load, reset, transfer
from support import rebuild, write

HANDOFF_CONTAINER = "CSQU3054383"


@pytest.fixture(scope="module")
def handoff_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("handoff")
    assert main(["run", "handoff", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def revocation_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("revocation")
    assert main(["run", "revocation", "--out", str(out)]) == 0
    return out


def test_run_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["run", "handoff", "--out", str(tmp_path / name), "--seed", "9"]) == 0
    for rel in ("trace.jsonl", "report.json", "ledgers/NL.jsonl", "ledgers/DE.jsonl"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    out = capsys.readouterr().out
    assert "invariants: ok" in out


def test_run_outputs(handoff_out):
    ledgers = sorted(p.name for p in (handoff_out / "ledgers").iterdir())
    assert ledgers == ["BE.jsonl", "DE.jsonl", "FR.jsonl", "NL.jsonl"]
    assert len({(handoff_out / "ledgers" / n).read_bytes() for n in ledgers}) == 1
    report = json.loads((handoff_out / "report.json").read_text())
    assert report["committed"] == {"RESET": 1, "TRANSFER": 1}
    rec = json.loads((handoff_out / "trace.jsonl").read_text().splitlines()[0])
    assert set(rec) >= {"tick", "event", "from", "to", "kind", "digest"}
    assert (handoff_out / "certs" / "operator-X.crt").is_file()
    assert (handoff_out / "crl" / "NL.crl").is_file()


def test_run_json_format(tmp_path, capsys):
    assert main(["run", "handoff", "--out", str(tmp_path), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["converged"] is True


def test_run_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("FREIGHTCHAIN_OUT", str(tmp_path / "env"))
    assert main(["run", "handoff"]) == 0
    assert (tmp_path / "env" / "report.json").is_file()


def test_run_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: 1\nagencies: [{id: NL}]\noperators: []\n"
                   "events: [{tick: 0, type: reset, agency: NL, container: CSQU3054383, "
                   "holder: Q}]\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "undeclared operator" in capsys.readouterr().err
    assert main(["run", "no-such-scenario"]) == 2
    assert main(["frobnicate"]) == 2


def test_audit_clean(handoff_out, revocation_out, capsys):
    assert main(["audit", str(handoff_out / "ledgers" / "NL.jsonl")]) == 0
    assert "ok: 2 block(s)" in capsys.readouterr().out
    assert main(["audit", str(revocation_out / "ledgers" / "DE.jsonl"), "--format", "json"]) == 0
    assert capsys.readouterr().out == ""


class TestTamper:
    def test_flipped_hash(self, handoff_out, tmp_path):
        text = (handoff_out / "ledgers" / "NL.jsonl").read_text()
        i = text.index('"block_hash":"') + len('"block_hash":"')
        flipped = text[:i] + ("0" if text[i] != "0" else "1") + text[i + 1:]
        p = tmp_path / "ledgers"
        p.mkdir()
        (p / "NL.jsonl").write_text(flipped)
        assert main(["audit", str(p / "NL.jsonl"), "--certs", str(handoff_out / "certs")]) == 4

    def test_reordered_blocks(self, handoff_out, tmp_path):
        lines = (handoff_out / "ledgers" / "NL.jsonl").read_text().splitlines(keepends=True)
        lines[1], lines[2] = lines[2], lines[1]
        (tmp_path / "l.jsonl").write_text("".join(lines))
        assert main(["audit", str(tmp_path / "l.jsonl"), "--certs", str(handoff_out / "certs")]) == 4

    def test_missing_counterpart(self, handoff_out, tmp_path, capsys):
        blocks = load(handoff_out / "ledgers" / "NL.jsonl").blocks

        def drop_half(b):
            txs = [transfer(tx.claims[0]) if tx.kind is TxKind.TRANSFER else tx
                   for tx in b.transactions]
            return txs, b.crl_versions
        path = write(rebuild(blocks, drop_half), tmp_path / "l.jsonl")
        assert main(["audit", path, "--certs", str(handoff_out / "certs")]) == 5
        assert "block 2" in capsys.readouterr().out

    def test_forged_reset(self, handoff_out, tmp_path, capsys):
        led = load(handoff_out / "ledgers" / "NL.jsonl")
        first = led.blocks[1].transactions[0].claims[0]
        fake = sign_claim(replace(first, signature=None), generate_keypair(ED25519, b"\x07" * 32))
        forged = rebuild(led.blocks, lambda b: (
            [reset(fake) if tx.kind is TxKind.RESET else tx for tx in b.transactions],
            b.crl_versions))
        path = write(forged, tmp_path / "l.jsonl")
        assert main(["audit", path, "--certs", str(handoff_out / "certs")]) == 5
        assert "BAD_SIGNATURE" in capsys.readouterr().out

    def test_revoked_signer_under_edited_versions(self, revocation_out, tmp_path, capsys):
        led = load(revocation_out / "ledgers" / "NL.jsonl")
        by_x = [b.height for b in led.blocks
                if any(str(c.signer) == "X" for tx in b.transactions for c in tx.claims)]
        assert by_x, "X signed something before the revocation"
        target = by_x[0]
        edited = rebuild(led.blocks, lambda b: (
            list(b.transactions),
            {**b.crl_versions, "NL": 1} if b.height >= target else b.crl_versions))
        path = write(edited, tmp_path / "l.jsonl")
        certs, crl = revocation_out / "certs", revocation_out / "crl"
        assert main(["audit", path, "--certs", str(certs), "--crl", str(crl)]) == 5
        assert "REVOKED_CERTIFICATE" in capsys.readouterr().out
        # the untouched file still audits clean against the same CRL
        assert main(["audit", str(revocation_out / "ledgers" / "NL.jsonl"),
                     "--certs", str(certs), "--crl", str(crl)]) == 0

    def test_missing_file(self, tmp_path):
        assert main(["audit", str(tmp_path / "none.jsonl")]) == 2


class TestHistory:
    def test_rows(self, handoff_out, capsys):
        assert main(["history", str(handoff_out / "ledgers" / "NL.jsonl"), HANDOFF_CONTAINER]) == 0
        out = capsys.readouterr().out
        assert out.startswith(f"{HANDOFF_CONTAINER}: 2 custody record(s)")
        assert "RESET" in out and "TRANSFER" in out

    def test_json(self, handoff_out, capsys):
        assert main(["history", str(handoff_out / "ledgers" / "NL.jsonl"), HANDOFF_CONTAINER,
                     "--format", "json"]) == 0
        rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert [(r["from"], r["to"]) for r in rows] == [("ε", "X"), ("X", "Y")]
        assert rows[1]["signers"] == ["X", "Y"]

    def test_bad_container(self, handoff_out, capsys):
        assert main(["history", str(handoff_out / "ledgers" / "NL.jsonl"), "CSQU3054384"]) == 2
        assert "bad container id" in capsys.readouterr().err

    def test_decrypts_with_key(self, tmp_path, capsys):
        scen = tmp_path / "p.yaml"
        scen.write_text(
            "version: 1\nseed: 2\nagencies: [{id: NL}, {id: DE}, {id: BE}]\n"
            "operators: [{id: X, agency: NL}]\nevents:\n"
            "  - {tick: 0, type: reset, agency: NL, container: CSQU3054383, holder: X}\n"
            "  - {tick: 5, type: package, actor: X, container: CSQU3054383, package_id: P9,"
            " sender: S, receiver: R, contents: bikes, weight: 40, destination: DE}\n")
        out = tmp_path / "o"
        assert main(["run", str(scen), "--out", str(out)]) == 0
        ledger = str(out / "ledgers" / "NL.jsonl")
        capsys.readouterr()
        assert main(["history", ledger, HANDOFF_CONTAINER, "--key",
                     str(out / "keys" / "DE.enc.key")]) == 0
        assert "P9" in capsys.readouterr().out
        assert main(["history", ledger, HANDOFF_CONTAINER, "--key",
                     str(out / "keys" / "BE.enc.key")]) == 0
        text = capsys.readouterr().out
        assert "P9" not in text and "1 package claim(s) for other agencies" in text


def test_bench_single_claim(capsys):
    assert main(["bench", "--count", "1", "--format", "json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["claims"] == 1 and rec["transactions"] == 1
    assert main(["bench", "--count", "0"]) == 2


def test_keygen(tmp_path):
    assert main(["keygen", "--agency", "NL", "--operator", "X", "--operator", "Y",
                 "--out", str(tmp_path), "--seed", "4"]) == 0
    keys, owner = read_keypair(tmp_path / "keys" / "X.key")
    assert owner == "operator:X" and keys.scheme == ED25519
    assert sorted(p.name for p in (tmp_path / "certs").iterdir()) == \
        ["agency-NL.crt", "operator-X.crt", "operator-Y.crt"]
    assert main(["keygen", "--agency", "../NL", "--out", str(tmp_path)]) == 2


def test_help(capsys):
    assert main(["--help"]) == 0
    assert "audit" in capsys.readouterr().out
