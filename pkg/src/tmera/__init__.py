"""Classical engine for Trotterized MERA ground-state optimization in 1D."""

__version__ = "0.1.0"

from .models import blbq_term, make_model, reference_energy, tfim_term  # noqa: F401
from .network import build_network, full_state_oracle, load_state, save_state  # noqa: F401
from .optimizer import LbfgsConfig, lbfgs_minimize  # noqa: F401
from .simulator import averaged_density, energy_density, sample_energy  # noqa: F401
