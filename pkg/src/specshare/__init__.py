"""specshare: stochastic-geometry model and optimizer for inter-operator spectrum leasing."""

from .geometry import (
    NetworkConfig,
    NoCoverageError,
    PointSet,
    dbm_to_watts,
    nearest_distance,
    sample_ppp,
    watts_to_dbm,
)
from .channel import (
    NetworkSample,
    all_rates_and_gradients,
    instantaneous_rate,
    peak_gain_cdf,
    peak_gain_pdf,
    rate_gradients,
    sample_buyer_power,
    sample_network,
    sinr_buyer,
    sinr_seller,
    validate_power_vector,
    validate_sharing_matrix,
)
from .rate_analysis import (
    QuadratureError,
    RateQuadratureSettings,
    buyer_power_moment,
    expected_rate_buyer,
    expected_rate_seller,
    interference_shape_integral,
    mc_expected_rate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
