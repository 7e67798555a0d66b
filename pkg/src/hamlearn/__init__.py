"""Policy learning guided by a constrained receding-horizon solver.

The package implements, end to end at desk scale: benchmark control
systems with state-input constraints, a constrained sequential
linear-quadratic trajectory optimizer, control-Hamiltonian machinery with
optimality-gap certificates, a mixture-of-experts policy trained by
explicit backpropagation, and the guided training loop tying them
together.
"""

from .buffer import Batch, ReplayBuffer, Sample
from .hamiltonian import (
    HamiltonianBatch,
    HamiltonianContext,
    OptimalityGapCertificate,
    argmin,
    benchmark_vs_mpc,
    certificate,
    evaluate,
    u_gradient,
    u_hessian,
)
from .policy import AMSGrad, MLPPolicy, MoEPolicy, load_policy, save_policy
from .slq import (
    SLQSolver,
    SolutionBundle,
    SolverConfig,
    SolverError,
    lagrange_multiplier,
)
from .systems import (
    BarrierConfig,
    ControlProblem,
    InputError,
    QuadraticCost,
    SystemModel,
    make_problem,
    make_system,
    step_integrate,
)
from .training import (
    EvalReport,
    TrainerConfig,
    alpha_schedule,
    bc_batch_loss,
    evaluate_policy,
    hamiltonian_batch_loss,
    mixing_policy,
    mpc_rollout_and_record,
    run_training,
    tube_sample,
)

__version__ = "0.1.0"
