"""Budget- and CPC-constrained bid optimization with feedback control.

The package derives the optimal bidding strategy for a campaign from its
bid log via the two-variable dual of the underlying allocation problem,
replays bidding through a second-price auction simulator, and holds the
budget-pacing and CPC constraints on drifting days with independent or
predictively mixed PID control of the strategy's two hyper-parameters.
"""

__version__ = "0.1.0"

from .auction import (AuctionOutcome, SimulationTrace, StepFeedback,
                      accumulated_cpc, run_auction, simulate_day)
from .bidding import (BaselineBidParams, BaselinePolicy, OptimalBidParams,
                      OptimalPolicy, baseline_click_bid, optimal_bid,
                      optimal_click_bid)
from .control import (BaselineController, DualParamController, MpcWeights,
                      PidGains, PidState, ReferenceProfile, actuate,
                      build_cost_reference, control_loop_step, mpc_mix,
                      normalize_q_signal, pid_step)
from .data import (BidLog, BidLogError, CampaignSpec, DriftConfig, LogSummary,
                   Opportunity, SyntheticConfig, generate_log, load_log,
                   summarize_log, write_log)
from .experiment import (BatchReport, Campaign, CampaignContext,
                         CampaignResult, build_batch, evaluate_batch,
                         grid_search, prepare_campaign, run_campaign)
from .lp import (DualSolution, SlacknessReport, brute_force_primal,
                 check_slackness, dual_objective, hindsight_optimal_value,
                 solve_dual)
