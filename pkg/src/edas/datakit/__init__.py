from .collect import (ScriptedControllerParams, collect_dataset, default_controller,
                      pd_controller_action)
from .dataset import ORIGINS, Dataset, Transition, check_chaining, concat
from .io import load_dataset, save_dataset
from .transforms import (goal_histogram, histogram_entropy, recompute_rewards,
                         relabel_hindsight, rewards_consistent, terminal_positions,
                         translate_trajectories)

__all__ = [
    "ORIGINS", "Dataset", "ScriptedControllerParams", "Transition", "check_chaining",
    "collect_dataset", "concat", "default_controller", "goal_histogram", "histogram_entropy", "load_dataset",
    "pd_controller_action", "recompute_rewards", "relabel_hindsight", "rewards_consistent",
    "save_dataset", "terminal_positions", "translate_trajectories",
]
