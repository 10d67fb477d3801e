"""defectscope: option-implied detection of short-term price bubbles.

Calibrates the lognormal SABR smile to bid/ask option quotes in a Bayesian
framework and reports the full posterior of the martingale defect indicator
A(theta) = 1 - exp(-2 rho alpha / nu), together with closed-form and
Monte Carlo evaluations of the finite-horizon defect.
"""

from .bayes import (
    McmcChain,
    PosteriorSpec,
    PosteriorSummary,
    adaptive_mcmc_run,
    kde_epanechnikov,
    log_posterior,
    nelder_mead_map,
    summarize_posterior,
    west_alpha_root,
)
from .defect import (
    DefectCurve,
    DefectQuadConfig,
    a_c,
    absorption_mc_oracle,
    bessel_k_imag,
    cev_expected_value,
    collateralized_call_price,
    defect_asymptotic_large_T,
    defect_curve,
    defect_finite_T,
    fundamental_value,
    indicator,
)
from .kernels import backend_name
from .market_data import (
    ChainSlice,
    Exercise,
    ForwardEstimate,
    OptionQuote,
    VolObservation,
    estimate_forward_and_carry,
    filter_liquidity,
    parse_chain_csv,
    quotes_to_vol_observations,
    write_chain_csv,
)
from .pricing import (
    FdGrid,
    OptionSide,
    american_fd_price,
    american_implied_vol,
    black_price,
    implied_vol,
)
from .sabr import (
    McConfig,
    SabrParams,
    hagan_implied_vol,
    hagan_smile,
    sabr_mc_price,
    sabr_simulate_forward,
)

__version__ = "0.1.0"
