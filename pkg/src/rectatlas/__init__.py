"""rectatlas: charts, aligned atlases and tangent transport on finite
metric measure spaces."""

from .space import (Space, PointSet, point_set, validate_space, ball, measure,
                    density, density_one_points, doubling_constant, ball_average)
from .lipschitz import (lipschitz_constant, local_lip, mcshane_extend,
                        mcshane_extend_vector, restricted_lip_compare,
                        chain_rule_defect)
from .atlas import (Chart, Atlas, RefinementTree, validate_chart,
                    split_by_density, build_refinement, alignment_defect, align)
from .orthonet import OrthoNet, ortho_net, SnapError, NetConstructionError
from .diffest import estimate_differential, RankDeficientFit
from .tangent import (GHBundle, Section, make_bundle, zero_section,
                      random_section, coordinate_section, combine, multiply,
                      pointwise_norm, l2_norm, local_dimension, transition,
                      push_section, pull_form, duality_defect, chain_defect,
                      TransportPlan, build_transport_plan, iso_step,
                      iso_inverse, contraction_profile, norm_preservation)
from .blowup import (BlowupConfig, DefectRecord, project_to_set, blowup_map,
                     quasi_isometry_defect, blowup_sweep,
                     rescaled_chart_coverage)
from .fixtures import FixtureSpec, GroundTruth, generate, make_atlas_tower

__version__ = "0.1.0"
