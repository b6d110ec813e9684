"""Multi-agent SAC with segmented gossip and regulated parameter mixing."""

from .config import RunConfig, load_config
from .envs import RingConfig, RingEnv, TabularSoftMdp, make_tabular
from .gossip import CommLedger, comm_cost, neighbors, run_comm_round, segment
from .harness import bench_comm, run, verify_theory
from .mixing import MixConfig, MixDecision, comm_mix, mix_parameters
from .nets import MlpSpec, SquashedGaussianPolicy, TwinCritics
from .sac import AgentConfig, AgentState, ReplayBuffer, Transition

__all__ = [
    "RunConfig", "load_config", "RingConfig", "RingEnv", "TabularSoftMdp",
    "make_tabular", "CommLedger", "comm_cost", "neighbors", "run_comm_round",
    "segment", "bench_comm", "run", "verify_theory", "MixConfig",
    "MixDecision", "comm_mix", "mix_parameters", "MlpSpec",
    "SquashedGaussianPolicy", "TwinCritics", "AgentConfig", "AgentState",
    "ReplayBuffer", "Transition",
]
