"""Multi-agent multi-step generative trajectory models.

Segment-level latent-variable models of interacting agents, trained on
exploration data from a deterministic 2-D particle world, planned over
with risk-sensitive (CVaR) latent-space trajectory optimization, and
executed through inverse-dynamics MPC.
"""

from .tensor import Tensor, backward, conv1d_causal, gated_activation, gradient_check, kl_diag_gaussian
from .optim import Adam

__version__ = "0.1.0"
