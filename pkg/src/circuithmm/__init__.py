"""Circuit-theory transition structure for hidden Markov models of count data."""
from .graph import SpatialGraph, AugmentedGraph, build_graph, lattice, laplacian, augment, distance_matrix
from .circuit import (CircuitSolution, DirectionalCurrents, pseudoinverse, resistance_distance,
                      solve_voltages, currents_matrix, split_directions, solve_circuit)
from .transition import (TransitionParams, TransitionKernel, safe_divide, scale_col,
                         build_transition, flow_matrix)
from .hmm import (ObservationSet, LatentPath, ModelParams, trans_logpdf, obs_loglik,
                  simulate_path, censor)
from .sampler import PriorSpec, SamplerConfig, PosteriorSamples, Sampler, run_chain, log_target_z

__version__ = "0.1.0"
