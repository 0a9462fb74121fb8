import time

import pytest

from driverl_client import (GroupSample, NoOpPolicy, RewardGreedyPolicy,
                            RolloutClient, TrainingAborted, group_advantages,
                            rollout_group, run_log_from_jsonl, run_log_to_jsonl,
                            training_loop)
from driverl_client.api import ProtocolError


@pytest.fixture(scope="module")
def client(live_server):
    return RolloutClient(base_url=live_server)


class TestRolloutGroup:
    def test_default_policy_group(self, client):
        sample = rollout_group(client, "mpc", NoOpPolicy(), group_size=4, seed=1)
        assert len(sample.completions) == 4
        assert len(sample.rewards) == 4
        # identical completions score identically; drive reward is exactly zero
        assert len(set(sample.rewards)) == 1
        assert sample.rewards[0] == pytest.approx(0.75)
        assert sample.advantages == [0.0, 0.0, 0.0, 0.0]
        assert sample.extraction_failures == [False] * 4

    def test_singleton_group_degenerate_advantage(self, client):
        sample = rollout_group(client, "mpc", NoOpPolicy(), group_size=1, seed=2)
        assert sample.advantages == [0.0]

    def test_two_arm_gap(self, client):
        class TwoArm:
            def generate(self, prompt, n):
                return [NoOpPolicy().text, "meaningless words"][:n]

            def update(self, sample):
                pass

        sample = rollout_group(client, "mpc", TwoArm(), group_size=2, seed=3)
        assert sample.rewards[0] > sample.rewards[1]
        assert sample.advantages[0] == pytest.approx(1.0)
        assert sample.advantages[1] == pytest.approx(-1.0)

    def test_group_size_mismatch_detected(self, client):
        class Short:
            def generate(self, prompt, n):
                return ["just one"]

            def update(self, sample):
                pass

        with pytest.raises(ValueError):
            rollout_group(client, "mpc", Short(), group_size=3, seed=0)

    def test_protocol_error_passthrough(self, client):
        with pytest.raises(ProtocolError):
            client.score("task-does-not-exist", ["x"])

    def test_transport_error_after_retries(self):
        from driverl_client import RolloutClient, TransportError
        dead = RolloutClient(base_url="http://127.0.0.1:9", timeout=0.3,
                             retries=2, retry_wait=0.01)
        with pytest.raises(TransportError):
            dead.request_task("mpc", 0)


class TestTrainingLoop:
    def test_zero_steps(self, client):
        assert training_loop(client, NoOpPolicy(), steps=0) == []

    def test_bookkeeping_ten_steps(self, client):
        log = training_loop(client, NoOpPolicy(), steps=10, group_size=2,
                            seed_fn=lambda step: step)
        assert [e.step for e in log] == list(range(10))
        assert all(e.mean_tokens > 0 for e in log)

    def test_update_failure_aborts_with_log(self, client):
        class Fragile(NoOpPolicy):
            def update(self, sample):
                raise RuntimeError("optimizer exploded")

        with pytest.raises(TrainingAborted) as exc:
            training_loop(client, Fragile(), steps=3)
        assert exc.value.step == 0
        assert len(exc.value.log) == 1

    def test_log_roundtrip(self, client, tmp_path):
        path = tmp_path / "run.jsonl"
        log = training_loop(client, NoOpPolicy(), steps=3, group_size=2,
                            log_path=str(path))
        text = path.read_text()
        assert run_log_to_jsonl(log) == text
        assert run_log_from_jsonl(text) == log

    def test_e2e_smoke_reward_greedy_nondecreasing(self, client):
        # acceptance: 20 steps against the live server; best-in-group reward
        # never decreases because the greedy policy replays its best completion
        start = time.monotonic()
        policy = RewardGreedyPolicy(seed=5)
        log = training_loop(client, policy, steps=20, group_size=4,
                            seed_fn=lambda step: 0)
        elapsed = time.monotonic() - start
        assert len(log) == 20
        best = [e.best_reward for e in log]
        assert all(b >= a - 1e-12 for a, b in zip(best, best[1:]))
        assert best[-1] >= best[0]
        print(f"[PASS] end-to-end smoke: 20 steps, best reward "
              f"{best[0]:.3f} -> {best[-1]:.3f} non-decreasing, "
              f"{elapsed:.0f}s < 600s")
        assert elapsed < 600.0
