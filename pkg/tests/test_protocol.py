import json
import math

import numpy as np
import pytest

from hardy_ot.harness.transport import LoopbackTransport, TransportError
from hardy_ot.protocol import (
    Message,
    MsgType,
    NoQualifyingPair,
    ProtocolConfig,
    SchemaError,
    SessionError,
    Violation,
    cross_check,
    frequency_gate,
    make_pairs,
    message_step,
    run_session,
    s3_offer,
    s5_refine,
    s6_encode,
    s7_decode,
)
from hardy_ot.protocol.parties import Channel
from hardy_ot.protocol.session import SessionResult, Transcript, run_parties
from hardy_ot.protocol.steps import pair_class_rates
from hardy_ot.qcore import GOLDEN_ALPHA2, BasisParam, Outcome, Setting, eigenstate

U, D = int(Setting.U), int(Setting.D)


@pytest.fixture(scope="module")
def honest_parties():
    return run_parties(ProtocolConfig(seed=11))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_runs=0), dict(eta=1.2), dict(frac_s3a=1.0),
                                    dict(frac_s2a=-0.1), dict(encoding=(0, 0))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ProtocolConfig(**kw)

    def test_round_trip_and_digest(self):
        cfg = ProtocolConfig(eta=0.97, seed=5)
        assert ProtocolConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
        assert cfg.digest() == ProtocolConfig(eta=0.97, seed=5).digest()
        assert cfg.digest() != ProtocolConfig(eta=0.96, seed=5).digest()

    def test_defaults(self):
        cfg = ProtocolConfig()
        assert cfg.frac_s3a == 0.25 and cfg.n_runs == 20000 and cfg.detection_z == 3.0


class TestMessages:
    def test_json_round_trip(self):
        m = Message(3, "00ff", "bob", MsgType.LIST_ANNOUNCEMENT, {"runs": [1, 4]})
        assert Message.from_json(m.to_json()) == m
        assert set(json.loads(m.to_json())) == {"seq", "session_id", "sender", "type", "payload"}

    @pytest.mark.parametrize("raw", [
        "not json",
        "[1, 2]",
        '{"seq": 0, "session_id": "x", "sender": "eve", "type": "OTIndex", "payload": {"pair": 1}}',
        '{"seq": 0, "session_id": "x", "sender": "bob", "type": "Nope", "payload": {}}',
        '{"seq": 0, "session_id": "x", "sender": "bob", "type": "OTIndex", "payload": {}}',
        '{"seq": -1, "session_id": "x", "sender": "bob", "type": "OTIndex", "payload": {"pair": 1}}',
    ])
    def test_schema_errors(self, raw):
        with pytest.raises(SchemaError):
            Message.from_json(raw)

    def test_message_step(self):
        assert message_step(Message(0, "s", "alice", MsgType.PAIR_LIST, {"pairs": []})) == "S4"
        req = Message(0, "s", "alice", MsgType.REVEAL_REQUEST, {"step": "S3a", "items": []})
        assert message_step(req) == "S3a"


class TestChannel:
    def _pair(self):
        a, b = LoopbackTransport(timeout=1.0).pair()
        return Channel(a, "alice", "s1"), Channel(b, "bob", "s1")

    def test_sequence_numbers(self):
        ca, cb = self._pair()
        ca.send(MsgType.OT_INDEX, {"pair": 1})
        assert cb.recv(MsgType.OT_INDEX).seq == 0
        cb.send(MsgType.OT_INDEX, {"pair": 2})
        assert ca.recv().seq == 1

    def test_wrong_session_rejected(self):
        ca, cb = self._pair()
        ca.endpoint.send(Message(0, "other", "alice", MsgType.OT_INDEX, {"pair": 1}))
        with pytest.raises(SessionError):
            cb.recv()

    def test_out_of_order_rejected(self):
        ca, cb = self._pair()
        ca.seq = 4
        ca.send(MsgType.OT_INDEX, {"pair": 1})
        with pytest.raises(SessionError):
            cb.recv()

    def test_unexpected_type_rejected(self):
        ca, cb = self._pair()
        ca.send(MsgType.OT_INDEX, {"pair": 1})
        with pytest.raises(SessionError):
            cb.recv(MsgType.PAIR_LIST)


class TestS3Offer:
    def test_all_minus(self):
        assert s3_offer(np.arange(10), -np.ones(10)) == []

    def test_membership_and_order(self):
        rng = np.random.default_rng(0)
        b = rng.choice([-1, 1], size=200)
        L = rng.permutation(np.arange(0, 200, 2))
        out = s3_offer(L, b)
        assert out == sorted(out)
        assert set(out) == {i for i in L.tolist() if b[i] == 1}


class TestMakePairs:
    def test_three_by_five(self):
        settings = np.full(8, U)
        outcomes = np.array([1, 1, 1, -1, -1, -1, -1, -1])
        pairs = make_pairs(settings, outcomes, range(8), np.random.default_rng(0))
        assert len(pairs) == 3
        used = [i for p in pairs for i in p]
        assert len(set(used)) == 6 and {0, 1, 2} <= set(used)

    def test_empty_classes(self):
        assert make_pairs(np.zeros(4, int), np.ones(4, int), range(4), np.random.default_rng(0)) == []

    def test_constraints_random(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(0, 60))
            A = rng.integers(0, 2, n)
            a = rng.choice([-1, 1], n)
            cand = rng.permutation(n)[: n // 2 + 1] if n else []
            pairs = make_pairs(A, a, cand, rng)
            used = [i for p in pairs for i in p]
            assert len(used) == len(set(used)) and set(used) <= set(np.asarray(cand).tolist())
            for i1, i2 in pairs:
                assert A[i1] == A[i2] and a[i1] != a[i2]
            for s in (U, D):
                grp = [i for i in np.asarray(cand).tolist() if A[i] == s]
                n_plus = sum(a[i] == 1 for i in grp)
                assert sum(A[p[0]] == s for p in pairs) == min(n_plus, len(grp) - n_plus)

    def test_class_ratio(self, honest_parties):
        alice, _, _ = honest_parties
        rates = pair_class_rates(ProtocolConfig().table)
        assert rates[Setting.U][0] == pytest.approx(0.090170 / 4, abs=1e-6)
        assert rates[Setting.D][0] == pytest.approx(0.236068 / 4, abs=1e-6)
        groups = np.array([alice.A[p[0]] for p in alice.pairs])
        frac_u = float(np.mean(groups == U))
        sigma = math.sqrt(0.276 * 0.724 / len(groups))
        assert abs(frac_u - 0.276) < 4 * sigma


class TestS5Refine:
    def test_split(self):
        B = np.array([U, D, U, U, D, D])
        pairs = [(0, 1), (2, 3), (4, 5)]
        r, ex, bases = s5_refine(B, pairs, [0, 1, 2])
        assert r == [0] and ex == [1, 2] and bases == [[U, U], [D, D]]
        assert s5_refine(B, pairs, []) == ([], [], [])

    def test_rprime_member_property(self, honest_parties):
        """The a=+1 member of an honest R' pair has B=A; the a=-1 member has B=A^c."""
        alice, bob, _ = honest_parties
        assert bob.r_prime
        for pid in bob.r_prime:
            for i in alice.pairs[pid]:
                if alice.a[i] == 1:
                    assert bob.B[i] == alice.A[i]
                else:
                    assert bob.B[i] == 1 - alice.A[i]

    def test_member_property_exhaustive(self):
        """Among the (A,+1,B,+1) cells only B=A has nonzero weight."""
        t = ProtocolConfig().table
        for A in (U, D):
            assert t.cells[A, 1 - A, 0, 0] < 1e-12
            assert t.cells[A, A, 0, 0] > 0.05


class TestS6:
    def test_encoding(self):
        rng = np.random.default_rng(0)
        ids, groups = [3, 5, 8, 9], [U, D, D, U]
        for _ in range(50):
            assert s6_encode(0, ids, groups, (0, 1), rng) in (3, 9)
            assert s6_encode(1, ids, groups, (0, 1), rng) in (5, 8)

    def test_no_qualifying(self):
        with pytest.raises(NoQualifyingPair):
            s6_encode(1, [1, 2], [U, U], (0, 1), np.random.default_rng(0))

    def test_same_seed_same_index(self):
        r1, _ = run_session(ProtocolConfig(seed=21), alice_bit=1)
        a1, _, _ = run_parties(ProtocolConfig(seed=21), alice_bit=1)
        a2, _, _ = run_parties(ProtocolConfig(seed=21), alice_bit=1)
        assert a1.ot_pair == a2.ot_pair
        assert a1.A[a1.pairs[a1.ot_pair][0]] == D and r1.alice_bit == 1


class TestS7:
    def test_decode_probability(self):
        p = BasisParam.golden()
        rng = np.random.default_rng(0)
        qubits = [eigenstate(p, Setting.U, Outcome.PLUS), eigenstate(p, Setting.U, Outcome.MINUS)]
        n, hits = 20_000, 0
        for _ in range(n):
            bit, outs = s7_decode(qubits, [U, D], p, rng)
            assert outs[0] is Outcome.PLUS
            if bit is not None:
                assert bit == 0 and outs[1] is Outcome.MINUS
                hits += 1
            else:
                assert outs == (Outcome.PLUS, Outcome.PLUS)
        sigma = math.sqrt(GOLDEN_ALPHA2 * (1 - GOLDEN_ALPHA2) / n)
        assert abs(hits / n - GOLDEN_ALPHA2) < 4 * sigma

    def test_d_pair_decodes_one(self):
        p = BasisParam.golden()
        rng = np.random.default_rng(1)
        qubits = [eigenstate(p, Setting.D, Outcome.MINUS), eigenstate(p, Setting.D, Outcome.PLUS)]
        bits = {s7_decode(qubits, [U, D], p, rng)[0] for _ in range(200)}
        assert bits == {None, 1}


class TestCrossCheck:
    def test_cells(self):
        assert cross_check([(U, 1, D, 1)]) == [Violation(0, "hardy")]
        assert cross_check([(D, 1, U, 1), (D, -1, D, -1)]) == [Violation(0, "hardy"), Violation(1, "hardy")]
        assert cross_check([(U, -1, D, 1), (U, 1, U, 1), (D, 1, D, -1)]) == []

    def test_remeasure(self):
        out = cross_check([(U, -1, D, 1), (U, 1, U, 1)], remeasured=[-1, -1])
        assert out == [Violation(1, "remeasure")]

    def test_honest_zero_violations(self, honest_parties):
        alice, bob, _ = honest_parties
        n = 10_000
        tuples = np.stack([alice.A[:n], alice.a[:n], bob.B[:n], bob.b[:n]], axis=1)
        assert cross_check(tuples) == []


class TestFrequencyGate:
    def test_examples(self):
        assert frequency_gate(4271, 10_000, 0.4271, 3.0)
        assert not frequency_gate(2135, 10_000, 0.4271, 3.0)
        with pytest.raises(ValueError):
            frequency_gate(0, 0, 0.4271, 3.0)

    def test_boundary(self):
        sigma = math.sqrt(0.5 * 0.5 / 10_000)
        assert frequency_gate(int(10_000 * (0.5 + 2.9 * sigma)), 10_000, 0.5, 3.0)
        assert not frequency_gate(int(10_000 * (0.5 + 3.1 * sigma)) + 1, 10_000, 0.5, 3.0)


class TestSession:
    def test_honest_completes(self, honest_parties):
        alice, bob, log = honest_parties
        assert alice.abort is None and bob.abort is None
        assert log[0].type is MsgType.QUBIT_BATCH and log[-1].type is MsgType.OT_INDEX
        assert [m.seq for m in log] == list(range(len(log)))

    def test_correct_on_success(self):
        for seed in range(8):
            result, _ = run_session(ProtocolConfig(seed=seed, n_runs=4000), alice_bit=seed % 2)
            assert result.abort is None
            if result.bob_decoded is not None:
                assert result.bob_decoded == seed % 2

    def test_noisy_session(self):
        result, tr = run_session(ProtocolConfig(eta=0.95, seed=3))
        assert result.abort is None
        assert result.counters["violations_S2a"] > 0

    def test_ideal_gate_aborts_on_noise_cell(self):
        """With eta=1 a single Hardy-zero event aborts, so a noisy source is caught at S2(a)."""
        from hardy_ot.adversary import AliceBadSource
        result, _ = run_session(ProtocolConfig(seed=4), AliceBadSource("product"))
        assert result.abort is not None and result.abort.step == "S2a"

    def test_run_consumption(self, honest_parties):
        """Runs revealed in a check never reappear in later lists."""
        alice, bob, log = honest_parties
        by_step = {}
        for m in log:
            if m.type is MsgType.REVEAL_REQUEST:
                by_step.setdefault(m.payload["step"], []).extend(m.payload["items"])
        s2 = set(by_step["S2a"])
        lplus = set(next(m for m in log if m.type is MsgType.LIST_ANNOUNCEMENT).payload["runs"])
        assert not s2 & lplus
        s3 = set(by_step["S3a"])
        pairs = next(m for m in log if m.type is MsgType.PAIR_LIST).payload["pairs"]
        assert not s3 & {i for p in pairs for i in p}
        sub = next(m for m in log if m.type is MsgType.PAIR_SUBSET).payload
        s4 = set(by_step["S4a"])
        assert not s4 & (set(sub["r_prime"]) | set(sub["excluded"]))
        ot = next(m for m in log if m.type is MsgType.OT_INDEX).payload["pair"]
        assert ot in sub["r_prime"] and ot not in set(by_step["S5a"])

    def test_transport_failure_is_not_an_abort(self):
        class Dead(LoopbackTransport):
            def pair(self):
                a, b = super().pair()
                b.close()
                a.close()
                return a, b

        with pytest.raises(TransportError):
            run_session(ProtocolConfig(seed=1, n_runs=500), transport=Dead(timeout=1.0))

    def test_result_invariants(self):
        from hardy_ot.protocol import AbortInfo
        with pytest.raises(ValueError):
            SessionResult(alice_bit=0, bob_decoded=0, abort=AbortInfo("S3a", "frequency", "alice"))
        r = SessionResult(alice_bit=1, bob_decoded=1, counters={"L": 5})
        assert SessionResult.from_dict(json.loads(json.dumps(r.to_dict()))) == r

    def test_transcript_round_trip(self, tmp_path):
        result, tr = run_session(ProtocolConfig(seed=2, n_runs=2000))
        path = tmp_path / "t.jsonl"
        tr.write(path)
        back = Transcript.read(path)
        assert back.to_jsonl() == tr.to_jsonl()
        lines = path.read_text().splitlines()
        assert json.loads(lines[0])["record"] == "header"
        assert all(set(json.loads(x)) == {"seq", "session_id", "sender", "type", "payload"}
                   for x in lines[1:-1])
        with pytest.raises(SchemaError):
            Transcript.from_jsonl(lines[1] + "\n")
