"""Proto successor measures for tabular MDPs."""

from .codebook import PolicyCodebook, codebook_policy
from .dataset import OfflineDataset, build_dataset
from .envs import build_four_room, build_grid, build_gridworld, four_room_spec, open_grid
from .evaluate import EvaluationReport, evaluate_goals
from .flow import AffineBasis, membership_residual, state_measure_basis, visitation_basis
from .infer import InferenceConfig, greedy_policy, infer_w_dual, infer_w_exact_lp, q_star
from .learn import DivergenceError, train_psm
from .mdp import RewardFunction, StochasticPolicy, TabularMdp, goal_reward, toy_mdp
from .model import PsmConfig, PsmModel, load_model, save_model
from .oracle import successor_measure, value_iteration, visitation
from .sf import sf_decompose, successor_features

__version__ = "0.1.0"
