"""Registry of named verifications, in `verify all` order."""

from typing import Callable, Dict

from experiments.cnn import verify_cnn
from experiments.deernet import run_deernet
from experiments.dln import verify_dln_covariance
from experiments.ilr import run_ilr
from experiments.jacobian import verify_jacobian
from experiments.kernel import verify_kernel
from experiments.mds import verify_mds
from experiments.oda import verify_oda
from experiments.solvers import verify_solvers
from experiments.splitting import verify_splitting
from experiments.thm1 import verify_thm1
from experiments.thm2 import verify_thm2
from lib.exp_helpers import VerificationResult
from lib.lib_config import ExperimentConfig

REGISTRY: Dict[str, Callable[[ExperimentConfig], VerificationResult]] = {
    "kernel": verify_kernel,
    "mds": verify_mds,
    "solvers": verify_solvers,
    "thm1": verify_thm1,
    "thm2": verify_thm2,
    "splitting": verify_splitting,
    "cnn": verify_cnn,
    "oda": verify_oda,
    "jacobian": verify_jacobian,
    "dln": verify_dln_covariance,
    "deernet": run_deernet,
    "ilr": run_ilr,
}
