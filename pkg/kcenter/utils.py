import logging
import logging.config
import logging.handlers
import pathlib

import numpy as np
import yaml


logger = logging.getLogger(__name__)

MODULE_PATH = pathlib.Path(__file__).parent
DEFAULT_LOGGING_CONFIG = MODULE_PATH.parent / 'logging.yml'


class RotatingFileHandlerRelativePath(logging.handlers.RotatingFileHandler):
    '''
    A RotatingFileHandler whose filename is relative to this package

    Referenced from ``logging.yml`` so that the log directory does not
    depend on the working directory of the caller.
    '''

    def __init__(self, filename, *args, **kwargs):
        path = pathlib.Path(filename)
        if not path.is_absolute():
            path = (MODULE_PATH / path).resolve()
        path.parent.mkdir(parents=True, exist_ok=True)
        super().__init__(str(path), *args, **kwargs)


def setup_logging(path=None, *, level=None):
    '''
    Configure logging from a YAML dictConfig file

    Parameters
    ----------
    path : str or pathlib.Path, optional
        The YAML file; defaults to the ``logging.yml`` next to the package.
        If it does not exist, ``logging.basicConfig`` is used instead.
    level : str or int, optional
        Level for the ``kcenter`` logger
    '''
    path = pathlib.Path(path) if path is not None else DEFAULT_LOGGING_CONFIG
    if path.exists():
        with open(path, 'rt') as f:
            config = yaml.safe_load(f)
        logging.config.dictConfig(config)
    else:
        logging.basicConfig()

    if level is not None:
        logging.getLogger('kcenter').setLevel(level)


def derive_seed(seed, *keys):
    '''
    Derive an independent 64-bit seed from a base seed and integer keys

    Uses numpy's SeedSequence spawn keys, so the result depends only on the
    arguments and never on the order in which tasks run.

    Parameters
    ----------
    seed : int
        The base seed
    *keys : int
        Any number of nonnegative integers (stage, trial, machine, ...)

    Returns
    -------
    int
    '''
    sequence = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(int(key) for key in keys),
    )
    return int(sequence.generate_state(1, np.uint64)[0])


def make_rng(seed, *keys):
    'A numpy Generator seeded from ``derive_seed(seed, *keys)``'
    return np.random.default_rng(derive_seed(seed, *keys))
