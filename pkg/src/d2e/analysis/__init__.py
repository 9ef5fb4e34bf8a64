from .bounds import (
    BOUND_COLUMNS,
    BoundReport,
    UnsupportedModeError,
    bound_rhs,
    bound_trajectory,
    expected_kl,
    fit_tv_constant,
    input_tv_exact,
    kl_rows,
    make_report,
    parse_tv_mode,
    pearson,
    pinsker_check,
    soft_accuracy,
    soft_accuracy_from_probs,
    theorem1_report,
    tv_exact,
)
from .diagnostics import (
    CollapseStats,
    capacity_bound,
    enumerate_ttfs_codewords,
    gradient_mismatch_norm,
    layer1_collapse_stats,
    mean_gradient_norm,
)
from .energy import (
    E_AC,
    E_MAC,
    CostLedger,
    EnergyReport,
    count_sops,
    energy_for_network,
    estimate_energy,
    forward_flops,
    synaptic_input_rates,
    training_cost,
)
