'''
Algorithm constants and the experiment configuration.
'''
import dataclasses
import json
import logging
import math
import pathlib
from typing import Optional

from .exceptions import ConfigError


logger = logging.getLogger(__name__)

PIPELINES = ('search', 'repeat', 'ext')
ORACLES = ('brute', 'planted', 'gonzalez')


@dataclasses.dataclass(frozen=True)
class Constants:
    '''
    The constants hidden in the asymptotic schedules

    Attributes
    ----------
    c_tau : float
        tau = ceil(c_tau * log2 log2 t)
    c_p : float
        p_0 = c_p * log2 n / n ** delta
    c_t : float
        t_j = ceil(c_t * log t_{j-1} * (log log t_{j-1}) ** (d + 2))
    c_beta : float
        beta = ceil(c_beta * log^(alpha + 1) n)
    c_psi : float
        psi = ceil(c_psi * log2 max(n, log2 delta))
    c_add : float
        Additive term of the center-count threshold
    c_0 : int
        alpha <= log* n - c_0
    zeta_alert : float
        Phase-two decay rate above which a warning is logged
    '''
    c_tau: float = 1.0
    c_p: float = 2.0
    c_t: float = 1.0
    c_beta: float = 2.0
    c_psi: float = 1.0
    c_add: float = 8.0
    c_0: int = 3
    zeta_alert: float = 0.95

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if field.name == 'c_0':
                if value < 0:
                    raise ConfigError(field.name, 'must be nonnegative')
            elif not value > 0:
                raise ConfigError(field.name, 'must be positive')


@dataclasses.dataclass(frozen=True)
class PlantedSpec:
    'k, n, d, r_star, separation of a planted instance'
    k: int
    n: int
    d: int
    r_star: float
    separation: float

    @classmethod
    def parse(cls, value):
        'From ``"k,n,d,rstar,sep"`` or a 5-sequence'
        if isinstance(value, str):
            value = value.split(',')
        try:
            k, n, d, r_star, separation = value
            spec = cls(int(k), int(n), int(d), float(r_star),
                       float(separation))
        except (TypeError, ValueError):
            raise ConfigError('planted', f'expected k,n,d,rstar,sep; got '
                                         f'{value!r}') from None
        if not 1 <= spec.k <= spec.n:
            raise ConfigError('planted', 'requires 1 <= k <= n')
        if spec.d < 1:
            raise ConfigError('planted', 'requires d >= 1')
        if spec.r_star <= 0:
            raise ConfigError('planted', 'requires rstar > 0')
        if spec.separation <= 2 * spec.r_star:
            raise ConfigError('planted', 'requires sep > 2 * rstar')
        return spec

    def as_tuple(self):
        return (self.k, self.n, self.d, self.r_star, self.separation)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    '''
    One experiment: the instance, the pipeline, and its knobs

    Build it with `ExperimentConfig.from_dict` (or `load_config`), which
    validates every key.
    '''
    k: int
    input: Optional[str] = None
    planted: Optional[PlantedSpec] = None
    alpha: int = 1
    delta: float = 0.5
    rho: float = 0.5
    seed: int = 0
    psi: Optional[int] = None
    out: Optional[str] = None
    csv: Optional[str] = None
    summary: Optional[str] = None
    trace: Optional[str] = None
    oracle: Optional[str] = None
    pipeline: str = 'search'
    radius: Optional[float] = None
    evaluate_all_radii: bool = False
    local_space_factor: float = 4.0
    bucket_width: float = 4.0
    c_rho: Optional[float] = None
    lsh_repetitions: Optional[int] = None
    lsh_trials: Optional[int] = None
    max_hubs_per_bucket: int = 10
    primitive_round_cost: int = 1
    workers: int = 1
    simulate: bool = True
    constants: Constants = Constants()

    _positive_ints = ('k', 'alpha', 'psi', 'lsh_repetitions', 'lsh_trials',
                      'max_hubs_per_bucket', 'workers')
    _positive_floats = ('radius', 'local_space_factor', 'bucket_width')

    @classmethod
    def from_dict(cls, mapping):
        '''
        Validate a plain mapping (e.g., parsed JSON)

        Raises
        ------
        ConfigError
            Naming the first offending key
        '''
        mapping = dict(mapping)
        names = {field.name for field in dataclasses.fields(cls)}
        for key in mapping:
            if key not in names:
                raise ConfigError(key, 'unknown configuration key')
        if mapping.get('k') is None:
            raise ConfigError('k', 'is required')

        values = {}
        for key, value in mapping.items():
            if value is None:
                continue
            values[key] = cls._convert(key, value)

        if (values.get('input') is None) == (values.get('planted') is None):
            raise ConfigError('input',
                              'exactly one of input and planted is required')
        if values.get('pipeline', 'search') != 'search' and \
                values.get('radius') is None:
            raise ConfigError('radius', 'is required by the '
                                        f'{values["pipeline"]!r} pipeline')
        if values.get('oracle') == 'planted' and values.get('planted') is None:
            raise ConfigError('oracle', 'planted oracle needs a planted '
                                        'instance')
        return cls(**values)

    @classmethod
    def _convert(cls, key, value):
        if key == 'planted':
            return (value if isinstance(value, PlantedSpec)
                    else PlantedSpec.parse(value))
        if key == 'constants':
            if isinstance(value, Constants):
                return value
            if not isinstance(value, dict):
                raise ConfigError(key, 'expected a mapping')
            try:
                return Constants(**value)
            except TypeError as ex:
                raise ConfigError(key, str(ex)) from None
        if key in ('input', 'out', 'csv', 'summary', 'trace'):
            if not isinstance(value, (str, pathlib.PurePath)):
                raise ConfigError(key, 'expected a path')
            return str(value)
        if key in ('evaluate_all_radii', 'simulate'):
            if not isinstance(value, bool):
                raise ConfigError(key, 'expected true or false')
            return value
        if key == 'pipeline':
            if value not in PIPELINES:
                raise ConfigError(key, f'expected one of {PIPELINES}')
            return value
        if key == 'oracle':
            if value not in ORACLES:
                raise ConfigError(key, f'expected one of {ORACLES}')
            return value
        if key in cls._positive_ints or key in ('seed',
                                                 'primitive_round_cost'):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(key, f'expected an integer; got {value!r}')
            if key in cls._positive_ints and value < 1:
                raise ConfigError(key, 'must be at least 1')
            if value < 0:
                raise ConfigError(key, 'must be nonnegative')
            return value

        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f'expected a number; got {value!r}')
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(key, 'must be finite')
        if key == 'delta' and not 0 < value < 1:
            raise ConfigError(key, 'must be in (0, 1)')
        if key == 'rho' and not 0 < value < 1:
            raise ConfigError(key, 'must be in (0, 1)')
        if key == 'c_rho' and value <= 1:
            raise ConfigError(key, 'must exceed 1')
        if key in cls._positive_floats and value <= 0:
            raise ConfigError(key, 'must be positive')
        return value

    def to_dict(self):
        'A JSON-friendly echo of the configuration'
        result = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, PlantedSpec):
                value = list(value.as_tuple())
            elif isinstance(value, Constants):
                value = dataclasses.asdict(value)
            result[field.name] = value
        return result

    def replace(self, **kwargs):
        'A copy with some keys changed (validated again)'
        values = self.to_dict()
        values.update(kwargs)
        return type(self).from_dict(values)


def load_config(path, *, overrides=None):
    '''
    Load and validate a JSON experiment configuration

    Parameters
    ----------
    path : str or pathlib.Path
    overrides : dict, optional
        Keys that take precedence over the file.  An input override
        drops the file's planted instance, and vice versa.

    Raises
    ------
    ConfigError
    '''
    path = pathlib.Path(path)
    try:
        with open(path, 'rt') as f:
            mapping = json.load(f)
    except OSError as ex:
        raise ConfigError('config', f'{path}: {ex.strerror}') from None
    except json.JSONDecodeError as ex:
        raise ConfigError('config', f'{path}: {ex}') from None
    if not isinstance(mapping, dict):
        raise ConfigError('config', f'{path}: expected a JSON object')
    logger.debug('Loaded configuration from %s', path)
    if overrides:
        # One instance source replaces the other
        if 'input' in overrides:
            mapping.pop('planted', None)
        if 'planted' in overrides:
            mapping.pop('input', None)
        mapping.update(overrides)
    return ExperimentConfig.from_dict(mapping)
