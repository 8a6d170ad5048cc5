'''
Exceptions raised by the simulator, the geometry layer and the pipeline.
'''


class KCenterError(Exception):
    'Base class for every error raised by kcenter'


class SimulatorError(KCenterError):
    'A simulated MPC cluster rejected an operation'


class CapacityExceeded(SimulatorError):
    'The payload does not fit into machine_count * local_space_words'


class SpaceViolation(SimulatorError):
    '''
    A machine would store more than S words at a round boundary

    Parameters
    ----------
    machine : int
        The offending machine
    words : int
        Words the machine would hold
    limit : int
        The local space S
    '''

    def __init__(self, machine, words, limit, operation=''):
        self.machine = machine
        self.words = words
        self.limit = limit
        self.operation = operation
        super().__init__(
            f'{operation or "operation"}: machine {machine} would store '
            f'{words} words (S={limit})'
        )


class CommViolation(SimulatorError):
    'A machine would send or receive more than S words in one round'

    def __init__(self, machine, words, limit, direction):
        self.machine = machine
        self.words = words
        self.limit = limit
        self.direction = direction
        super().__init__(
            f'machine {machine} would {direction} {words} words in one '
            f'round (S={limit})'
        )


class GeometryError(KCenterError):
    'Invalid point data'


class DimensionMismatch(GeometryError, ValueError):
    'Points of different dimension were combined'


class EmptySet(GeometryError, ValueError):
    'An operation requiring a nonempty set got an empty one'


class DuplicatePoints(GeometryError, ValueError):
    'Two points share coordinates, so normalization is undefined'


class PointFileError(GeometryError, ValueError):
    'A point file could not be parsed (e.g., ragged rows)'


class InvalidParams(KCenterError, ValueError):
    'Parameters outside of their documented range'


class ConfigError(InvalidParams):
    '''
    An experiment configuration failed validation

    Parameters
    ----------
    field : str
        The offending configuration key
    message : str
        What is wrong with it
    '''

    def __init__(self, field, message):
        self.field = field
        super().__init__(f'{field}: {message}')


class TooLarge(InvalidParams):
    'Exhaustive search requested over too many candidate center sets'


class InfeasibleGeometry(InvalidParams):
    'Planted centers could not be placed at the requested separation'


class HubNotInSet(InvalidParams):
    'Greedy was seeded with a point outside of its input set'


class PipelineFailure(KCenterError):
    '''
    A randomized stage reported Fail

    The ``stage`` attribute is extended by every enclosing stage, so the
    final message reads like ``ext[2]/phase1.1/iter3: ...``.
    '''

    def __init__(self, message, *, stage=''):
        self.stage = stage
        self.message = message
        super().__init__(message)

    def tag(self, stage):
        'Prefix the stage tag with an enclosing stage name'
        self.stage = f'{stage}/{self.stage}' if self.stage else stage
        return self

    def __str__(self):
        if self.stage:
            return f'{self.stage}: {self.message}'
        return self.message


class SearchFailed(PipelineFailure):
    'Nearest-hub search left some point without a hub in every trial'


class SampleFailed(PipelineFailure):
    'Sample-and-solve sampled no hubs'


class AllRepetitionsFailed(PipelineFailure):
    'Every repetition of the refinement failed'


class NoFeasibleRadius(PipelineFailure):
    'Even the largest radius guess returned too many centers'


class CertificateViolation(KCenterError, AssertionError):
    'A deterministic guarantee (coverage, nesting, cost bound) did not hold'
