"""Direct-to-event transfer for spiking networks, at desk scale."""

import os

# BLAS thread pools read these once, at numpy import; one thread keeps float
# reductions in a fixed order.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, os.environ.get("D2E_THREADS", "1"))

from .autodiff import Tape, Tensor  # noqa: E402
from .network import ArchitectureSpec, SpikingNetwork, build, forward_probs, run_unrolled, temporal_readout  # noqa: E402
from .neuron import LIFParams, lif_step  # noqa: E402
from .training import TransferConfig, pretrain_direct, train_skd, train_tsf  # noqa: E402

__version__ = "0.1.0"
