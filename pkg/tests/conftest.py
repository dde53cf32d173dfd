import json
import os
import subprocess
import sys

import pytest

from hardy_ot.adversary import AliceFalsePairs, BobFilterLPlus, BobPadLPlus, BobPremeasureFilter
from hardy_ot.harness.experiment import run_batch
from hardy_ot.protocol import ProtocolConfig
from hardy_ot.protocol.session import SessionResult, Transcript
from hardy_ot.streams import session_seed

MASTER_SEED = 2024
HONEST_SESSIONS = 1000
ADVERSARY_TRIALS = 500


def message_flow(transcript):
    return [(m.sender, m.type.value) for m in transcript.messages]


def serve_pair(seed, n_runs, tmp_path, bit=None):
    """Run serve-bob (listening) and serve-alice (connecting) as two processes."""
    common = ["--seed", str(seed), "--n-runs", str(n_runs), "--timeout", "60"]
    env = {**os.environ, "PYTHONUNBUFFERED": "1"}
    env.pop("HARDY_OT_SEED", None)
    bob = subprocess.Popen([sys.executable, "-m", "hardy_ot", "serve-bob", "--listen", "127.0.0.1:0",
                            "--transcript", str(tmp_path / "bob.jsonl"), *common],
                           stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
    line = bob.stderr.readline().split()
    assert line[0] == "listening", line
    alice_cmd = [sys.executable, "-m", "hardy_ot", "serve-alice", "--connect", line[1],
                 "--transcript", str(tmp_path / "alice.jsonl"), *common]
    if bit is not None:
        alice_cmd += ["--bit", str(bit)]
    alice = subprocess.run(alice_cmd, capture_output=True, text=True, env=env, timeout=120)
    b_out, b_err = bob.communicate(timeout=120)
    assert alice.returncode in (0, 1), alice.stderr
    assert bob.returncode in (0, 1), b_err
    a_view, b_view = json.loads(alice.stdout), json.loads(b_out)
    merged = SessionResult.merge(a_view, b_view)
    return merged, Transcript.read(tmp_path / "alice.jsonl"), Transcript.read(tmp_path / "bob.jsonl")


def _seeds(master, n):
    return [session_seed(master, i) for i in range(n)]


@pytest.fixture(scope="session")
def honest_batch():
    """1000 honest sessions at the default configuration, with message flows."""
    out = run_batch(ProtocolConfig(seed=MASTER_SEED), _seeds(MASTER_SEED, HONEST_SESSIONS),
                    record=True, with_transcripts=True, reducer=message_flow)
    return [r for r, _ in out], [f for _, f in out]


def _adversary(strategy, master):
    return run_batch(ProtocolConfig(seed=master), _seeds(master, ADVERSARY_TRIALS), strategy)


@pytest.fixture(scope="session")
def filter_batch():
    return _adversary(BobFilterLPlus(), MASTER_SEED + 1)


@pytest.fixture(scope="session")
def premeasure_batch():
    return _adversary(BobPremeasureFilter(), MASTER_SEED + 2)


@pytest.fixture(scope="session")
def pad_batch():
    return _adversary(BobPadLPlus(50), MASTER_SEED + 3)


@pytest.fixture(scope="session")
def false_pairs_batch():
    return _adversary(AliceFalsePairs(20), MASTER_SEED + 4)
