"""Graph minibatch sampling engine with a periodically refreshed node cache,
node-wise and layer-wise baselines, a reference GraphSage trainer, and a
benchmark harness."""

from .cache import (CacheState, ProbVector, build_cache, degree_probs,
                    empirical_inclusion, inclusion_prob, random_walk_probs,
                    sample_cache)
from .graph import (Graph, GraphFormatError, InvariantError, NodeSet,
                    build_csr, generate_powerlaw, generate_sbm, load_binary,
                    load_edgelist, save_binary, validate_graph)
from .metrics import (BatchStats, MetricsReport, copy_cost, count_input_nodes,
                      run_benchmark)
from .model import (AdamState, ModelParams, ParamGrads, TrainConfig,
                    TrainReport, adam_step, backward, forward,
                    full_batch_forward, init_params, loss_and_grad, micro_f1,
                    train)
from .pool import SamplerPool
from .sampling import (LayerBlock, MiniBatch, SamplerConfig, build_minibatch,
                       estimate_edge_inclusion, gns_weight_paper,
                       isolated_fraction, sample_ladies,
                       sample_neighbors_gns, sample_neighbors_uniform,
                       validate_minibatch)

__version__ = "0.1.0"
