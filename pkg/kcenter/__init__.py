from ._version import __version__
from .clustering import CenterSet, greedy, sample_and_solve
from .config import Constants, ExperimentConfig, load_config
from .context import PipelineContext
from .geometry import PointSet, cost, load_points, normalize
from .harness import (brute_force_opt, generate_planted, gonzalez_baseline,
                      run_experiment)
from .lsh import LshParams, build_family, nearest_hub_search
from .mpc import MpcCluster, MpcConfig, create_cluster
from .refine import (ext_k_center, ext_k_center_repeat, ext_k_center_search,
                     uniform_center)

__all__ = [
    '__version__',
    'CenterSet', 'Constants', 'ExperimentConfig', 'LshParams', 'MpcCluster',
    'MpcConfig', 'PipelineContext', 'PointSet',
    'brute_force_opt', 'build_family', 'cost', 'create_cluster',
    'ext_k_center', 'ext_k_center_repeat', 'ext_k_center_search',
    'generate_planted', 'gonzalez_baseline', 'greedy', 'load_config',
    'load_points', 'nearest_hub_search', 'normalize', 'run_experiment',
    'sample_and_solve', 'uniform_center',
]
