"""Policy synthesis over the product interval MDP."""
from .mec import Mec, compute_mecs
from .policies import (EXPLORATION, GOAL_REACHING, LTL, RL, LtlStrategy, SwitchingPolicy,
                       exploration_policy, goal_reaching_policy)
from .pruning import (accepting_mec_states, can_reach, failure_states, prune_nonviolating,
                      prune_satisfying, select_optimal_mec)
from .qlearning import QTable, q_learn, q_learn_offline
from .tradeoff import TradeoffBounds, tradeoff_bounds
from .values import ValueBounds, interval_value_iteration, resolve_intervals
