import random

import pytest

from freightchain.consensus import (
    ClaimMsg,
    Clock,
    CustomsNode,
    Network,
    NetworkConfig,
    NotProposer,
    OperatorNode,
    Partition,
    RoundAbort,
    conflicting_commits,
    node_id,
    propose_block,
    quorum,
    run_network,
    trace_lines,
    vote_and_commit,
)
from freightchain.identity import revoke_certificate
from freightchain.ledger import TxKind
from freightchain.model import claim_id
from support import C1, C2, C3, T0


def make_nodes(world, config, trust=None):
    # round-robin order is by agency id: BE, DE, FR, NL
    return [CustomsNode(a, world.agencies, trust or world.trust(), config, clock=Clock(T0))
            for a in sorted(world.agencies)]


def make_ops(world, config):
    customs = [node_id(a) for a in sorted(world.agencies)]
    return {name: OperatorNode(op, customs, config, world.certs[op]) for name, op in world.ops.items()}


def submit(ops, name, claim):
    op = ops[name]
    return lambda tick: [(op.id, s) for s in op.track(tick, claim)]


def reset_by(nodes, claim):
    node = nodes[0]
    return lambda tick: [(node.id, s) for s in node.submit_own(tick, claim)]


def test_quorum():
    assert [quorum(n) for n in (1, 3, 4, 7, 24)] == [1, 3, 3, 5, 17]


class TestNetwork:
    def test_broadcast_one_copy_each(self, world):
        net = Network(NetworkConfig(seed=1))
        claim = world.claim("A", "Y", "A")
        arrivals = net.broadcast(0, "operator:A", ["agency:NL", "agency:DE", "agency:BE"],
                                 ClaimMsg(claim))
        assert all(1 <= t <= 2 for _, t in arrivals)
        delivered = net.due(2)
        assert sorted(dst for _, dst, _ in delivered) == ["agency:BE", "agency:DE", "agency:NL"]
        assert net.idle and net.due(10) == []

    def test_link_drop(self, world):
        cfg = NetworkConfig(link_drop={("a", "b"): 0.999999})
        net = Network(cfg)
        msg = ClaimMsg(world.claim("A", "Y", "A"))
        assert all(net.send(0, "a", "b", msg) is None for _ in range(50))
        assert net.send(0, "b", "a", msg) is not None

    def test_partition_cuts_both_ways(self, world):
        p = Partition(0, 10, frozenset({"a"}))
        net = Network(NetworkConfig(partitions=(p,)))
        msg = ClaimMsg(world.claim("A", "Y", "A"))
        assert net.send(5, "a", "b", msg) is None and net.send(5, "b", "a", msg) is None
        assert net.send(10, "a", "b", msg) is not None

    def test_control_never_dropped(self, world):
        net = Network(NetworkConfig(drop_rate=0.9, latency=(2, 5)))
        msg = ClaimMsg(world.claim("A", "Y", "A"))
        assert all(net.send(0, "a", "b", msg, control=True) == 2 for _ in range(20))

    def test_same_seed_same_trace(self, world):
        def go():
            net = Network(NetworkConfig(seed=7, drop_rate=0.3, latency=(1, 4)))
            for i in range(40):
                net.send(i, "a", "b", ClaimMsg(world.claim("A", "Y", "A", minutes=i)))
            net.due(100)
            return trace_lines(net.trace)
        assert go() == go()

    def test_config_checks(self):
        with pytest.raises(ValueError):
            NetworkConfig(latency=(0, 1))
        with pytest.raises(ValueError):
            NetworkConfig(drop_rate=1.0)
        with pytest.raises(ValueError):
            NetworkConfig(latency=(1, 2), round_ticks=5)


class TestLockStep:
    def test_not_proposer(self, world):
        nodes = make_nodes(world, NetworkConfig())
        with pytest.raises(NotProposer):
            propose_block(nodes[1], 0)

    def test_empty_mempool(self, world):
        nodes = make_nodes(world, NetworkConfig())
        assert propose_block(nodes[0], 0) is None

    def test_identical_candidates_identical_proposals(self, world):
        claims = [world.reset("X"), world.reset("Y", container=C2), world.reset("Z", container=C3)]
        blocks = []
        for order in (claims, list(reversed(claims))):
            node = make_nodes(world, NetworkConfig())[0]
            for c in order:
                node.on_message(0, "x", ClaimMsg(c))
            blocks.append(propose_block(node, 0, tick=5).block)
        assert blocks[0].to_line() == blocks[1].to_line()

    def test_honest_commit(self, world):
        nodes = make_nodes(world, NetworkConfig())
        for n in nodes:
            n.on_message(0, "x", ClaimMsg(world.reset("X")))
        block = vote_and_commit(nodes, propose_block(nodes[0], 0, tick=5), tick=5)
        assert all(n.ledger.tip == block for n in nodes)
        assert nodes[2].certs[1] == frozenset(n.id for n in nodes)
        assert all(not n.mempool for n in nodes)

    def test_revoked_signer_aborts(self, world):
        nodes = make_nodes(world, NetworkConfig())
        for n in nodes:
            n.on_message(0, "x", ClaimMsg(world.reset("A")))
        vote_and_commit(nodes, propose_block(nodes[0], 0, tick=5), tick=5)
        for n in nodes:
            n.on_message(6, "x", ClaimMsg(world.claim("A", "ε", "A", minutes=1)))
        stale = propose_block(nodes[1], 1, tick=200)  # built before the revocation
        revoked = revoke_certificate(world.cas[world.customs].crl, world.certs[world["A"]].serial)
        for n in nodes[2:]:
            n.trust.apply_crl(revoked)
        with pytest.raises(RoundAbort):
            vote_and_commit(nodes, stale, tick=200)
        assert all(n.ledger.height == 1 for n in nodes)
        nodes[0].trust.apply_crl(revoked)
        nodes[1].trust.apply_crl(revoked)
        assert propose_block(nodes[2], 2, tick=200) is None
        assert "REVOKED_CERTIFICATE" in {code for code, _ in nodes[2].rejections.values()}


class TestRuns:
    def test_empty_schedule_is_genesis(self, world):
        run = run_network(make_nodes(world, NetworkConfig()), NetworkConfig())
        assert run.converged() and all(led.height == 0 for led in run.ledgers.values())

    def test_single_pair(self, world):
        cfg = NetworkConfig(seed=3)
        nodes, ops = make_nodes(world, cfg), make_ops(world, cfg)
        sched = [(0, reset_by(nodes, world.reset("X"))),
                 (20, submit(ops, "X", world.claim("X", "Y", "X", minutes=20))),
                 (21, submit(ops, "Y", world.claim("X", "Y", "Y", minutes=20)))]
        run = run_network(nodes, cfg, sched, ops.values())
        assert run.converged()
        led = nodes[0].ledger
        kinds = [tx.kind for tx in led.transactions()]
        assert kinds == [TxKind.RESET, TxKind.TRANSFER]
        assert not ops["X"].busy and not ops["Y"].busy

    def test_submission_order_does_not_change_result(self, world):
        claims = [world.claim("X", "Y", s, minutes=20) for s in ("X", "Y")] + \
                 [world.claim("Z", "W", s, container=C2, minutes=20) for s in ("Z", "W")]
        outcomes = set()
        for perm in ([0, 1, 2, 3], [3, 2, 1, 0], [1, 3, 0, 2]):
            cfg = NetworkConfig(seed=5)
            nodes, ops = make_nodes(world, cfg), make_ops(world, cfg)
            sched = [(0, reset_by(nodes, world.reset("X"))),
                     (0, reset_by(nodes, world.reset("Z", container=C2)))]
            sched += [(20 + k, submit(ops, str(claims[i].signer), claims[i]))
                      for k, i in enumerate(perm)]
            run = run_network(nodes, cfg, sched, ops.values())
            assert run.converged()
            outcomes.add(frozenset(cid for tx in nodes[0].ledger.transactions()
                                   for cid in tx.claim_ids))
        assert len(outcomes) == 1 and len(next(iter(outcomes))) == 6

    def test_duplicate_claim_committed_once(self, world):
        cfg = NetworkConfig(seed=2)
        nodes, ops = make_nodes(world, cfg), make_ops(world, cfg)
        exit_claim = world.claim("X", "ε", "X", minutes=5)
        sched = [(0, reset_by(nodes, world.reset("X")))]
        sched += [(t, submit(ops, "X", exit_claim)) for t in (10, 11, 40, 90)]
        run_network(nodes, cfg, sched, ops.values())
        ids = [cid for tx in nodes[0].ledger.transactions() for cid in tx.claim_ids]
        assert ids.count(claim_id(exit_claim)) == 1


def chained_schedule(world, nodes, ops, rng, containers=(C1, C2), hops=3):
    names = list(world.ops)
    sched, pairs = [], []
    for c in containers:
        holder = rng.choice(names)
        sched.append((0, reset_by(nodes, world.reset(holder, container=c))))
        t = 0
        for _ in range(hops):
            nxt = rng.choice([n for n in names if n != holder])
            t += rng.randint(10, 40)
            pair = [world.claim(holder, nxt, s, container=c, minutes=t) for s in (holder, nxt)]
            sched += [(t, submit(ops, holder, pair[0])), (t + rng.randint(0, 5),
                                                          submit(ops, nxt, pair[1]))]
            pairs.append((t, pair))
            holder = nxt
    return sched, pairs


@pytest.mark.parametrize("seed", range(12))
def test_safety_and_liveness(world, seed):
    rng = random.Random(seed)
    drop = [0.0, 0.05, 0.1, 0.2][seed % 4]
    parts = ()
    if seed % 3 == 0:
        parts = (Partition(10, 60, frozenset({node_id(world.agencies[seed % 4])})),)
    cfg = NetworkConfig(seed=seed, drop_rate=drop, latency=(1, 3), partitions=parts)
    nodes, ops = make_nodes(world, cfg), make_ops(world, cfg)
    sched, pairs = chained_schedule(world, nodes, ops, rng)
    run = run_network(nodes, cfg, sched, ops.values())
    assert conflicting_commits(run.trace) == {}
    assert run.converged()
    led = nodes[0].ledger
    R = cfg.ticks_per_round
    commit_tick = {}
    for rec in run.trace:
        if rec["event"] == "commit":
            commit_tick[rec["height"]] = max(commit_tick.get(rec["height"], 0), rec["tick"])
    height_of = {cid: tx.accepted_at for tx in led.transactions() for cid in tx.claim_ids}
    for t, pair in pairs:
        ids = [claim_id(c) for c in pair]
        assert all(i in height_of for i in ids), f"pair at tick {t} never committed"
        last = max(commit_tick[height_of[i]] for i in ids)
        assert (last - t) / R <= 50


def test_same_seed_byte_identical(world):
    def go():
        rng = random.Random(9)
        cfg = NetworkConfig(seed=9, drop_rate=0.15)
        nodes, ops = make_nodes(world, cfg), make_ops(world, cfg)
        sched, _ = chained_schedule(world, nodes, ops, rng)
        run = run_network(nodes, cfg, sched, ops.values())
        return trace_lines(run.trace), [n.ledger.dumps() for n in nodes]
    assert go() == go()
