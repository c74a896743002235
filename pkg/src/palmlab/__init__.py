"""palmlab: a simulation laboratory for invariant point processes.

Samplers and factor operations for point processes on a flat torus, a
Euclidean box, and the affine line, together with statistical checkers for
the Palm-calculus identities that govern them (Mecke-Slivnyak, the Campbell
refined-sum identity, the mass transport principle, degree balance of the
rerooting groupoid, balanced allocations, extra head schemes, one-ended
clumpings, and directed-line factor graphs).
"""

__version__ = "0.1.0"

from .errors import (InsufficientDataError, PreconditionError, RangeError,
                     RetryError, UsageError)
from .geometry import (AffineLine, CarrierGroup, EuclideanBox, FlatTorus,
                       GroupPoint, Window, haar_volume, right_translate_volume)
from .process import (BirootedPair, Configuration, MarkedConfiguration,
                      ProcessSpec, RootedConfiguration, UNIT_INTERVAL,
                      attach_iid_marks, clip_to_ball, count,
                      estimate_intensity, make_sampler, reroot, reroot_marked,
                      sample_lattice_shift, sample_poisson, translate,
                      translate_marked)
from .factor import (ArrowRule, FactorGraph, LocalEvent, LocalMark,
                     TransportRule, VoronoiPartition, check_F_separated,
                     constant_thickening, delta_thinning, distance_R_graph,
                     graph_from_arrow_set, independent_thinning,
                     input_output_decomposition, local_decode_marks,
                     local_encode_marks, marking_from_map,
                     nearest_neighbor_digraph, project_output,
                     thinning_from_set, voronoi_partition)
from .palm import (Battery, ClippedFunction, PalmSampleSet, check_clmm,
                   check_degree_balance, check_mecke_slivnyak, check_mtp,
                   check_nonunimodular_thickening, check_palm_colouring,
                   check_palm_thickening, check_palm_thinning, palm_probability,
                   palm_samples, size_biased_draw)
from .allocation import (Allocation, balanced_allocation, check_extra_head,
                         check_voronoi_palm_volume, extra_head_point,
                         voronoi_owner_point)
from .clumping import (ClumpingSequence, build_clumping, path_order,
                       verify_clumping, z_line_factor)
from .stats import (RatioMoments, StatReport, accumulate_trials,
                    chi_square_gof, mean_se, merge_reports,
                    poisson_dispersion, two_sample_chi_square, two_sample_ks)
from .rng import experiment_id, mix64, trial_rng
