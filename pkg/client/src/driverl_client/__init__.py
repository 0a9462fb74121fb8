"""Client SDK for the rollout scoring protocol."""

from .advantages import group_advantages
from .api import ProtocolError, RolloutClient, TransportError
from .loop import (GroupSample, RunLogEntry, TrainingAborted, rollout_group,
                   run_log_from_jsonl, run_log_to_jsonl, training_loop)
from .policies import NoOpPolicy, Policy, RewardGreedyPolicy

__version__ = "0.1.0"
