'''
Points, Euclidean distances, the k-center COST objective and normalization.

Point sets are immutable numpy-backed containers.  Everything downstream
works on positions into a `PointSet` and reports identifiers, which are
stable across subsets.
'''
import collections
import functools
import logging
import math
import pathlib

import numpy as np
import scipy.spatial
import scipy.spatial.distance

from .exceptions import (DimensionMismatch, DuplicatePoints, EmptySet,
                         GeometryError, InvalidParams, PointFileError)


logger = logging.getLogger(__name__)

#: Absolute tolerance used for every distance comparison
TOLERANCE = 1e-9
#: Point sets up to this size use the quadratic pair scan for the diameter
PAIR_SCAN_LIMIT = 2000
#: The supported dimension envelope
MAX_DIMENSION = 8

Point = collections.namedtuple('Point', ['coords', 'id'])


def _as_coords(p):
    'Coordinates of a Point, a PointSet row, or any 1-D array-like'
    if isinstance(p, Point):
        p = p.coords
    return np.asarray(p, dtype=float).reshape(-1)


class PointSet:
    '''
    An immutable set of points in R^d with stable integer identifiers

    Parameters
    ----------
    coords : array-like
        (n, d) coordinates
    ids : array-like, optional
        Distinct integer identifiers; defaults to ``0 .. n-1``
    scale : float, optional
        The factor the coordinates were multiplied by during normalization
    '''

    def __init__(self, coords, ids=None, *, scale=1.0):
        coords = np.array(coords, dtype=float)
        if coords.ndim == 1 and coords.size == 0:
            coords = coords.reshape(0, 1)
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise DimensionMismatch(
                f'Expected (n, d) coordinates with d >= 1; got shape '
                f'{coords.shape}'
            )
        if not np.all(np.isfinite(coords)):
            raise GeometryError('Coordinates must be finite')

        if ids is None:
            ids = np.arange(len(coords), dtype=np.int64)
        else:
            ids = np.array(ids, dtype=np.int64).reshape(-1)
            if len(ids) != len(coords):
                raise GeometryError(
                    f'{len(ids)} ids given for {len(coords)} points'
                )

        sorter = np.argsort(ids, kind='stable')
        sorted_ids = ids[sorter]
        if len(ids) > 1 and np.any(sorted_ids[1:] == sorted_ids[:-1]):
            raise GeometryError('Point ids must be distinct')

        coords.setflags(write=False)
        ids.setflags(write=False)
        self.coords = coords
        self.ids = ids
        self.scale = float(scale)
        self._sorter = sorter
        self._sorted_ids = sorted_ids

    @classmethod
    def from_points(cls, points):
        'Build a PointSet from a sequence of `Point`'
        points = list(points)
        if not points:
            raise EmptySet('No points given')
        dims = {len(_as_coords(p)) for p in points}
        if len(dims) != 1:
            raise DimensionMismatch(f'Mixed point dimensions: {sorted(dims)}')
        return cls([_as_coords(p) for p in points],
                   [p.id for p in points])

    @property
    def n(self):
        'Number of points'
        return len(self.coords)

    @property
    def dim(self):
        'The dimension d'
        return self.coords.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, position):
        return Point(tuple(self.coords[position]), int(self.ids[position]))

    def __iter__(self):
        for position in range(self.n):
            yield self[position]

    def __repr__(self):
        return (f'<{self.__class__.__name__} n={self.n} d={self.dim} '
                f'scale={self.scale:g}>')

    def contains(self, ids):
        'Boolean mask: which of ``ids`` are members of this set'
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if not self.n:
            return np.zeros(len(ids), dtype=bool)
        idx = np.searchsorted(self._sorted_ids, ids)
        idx = np.minimum(idx, self.n - 1)
        return self._sorted_ids[idx] == ids

    def positions_of(self, ids):
        '''
        Positions of the given ids

        Raises
        ------
        KeyError
            If any id is not a member
        '''
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        found = self.contains(ids)
        if not np.all(found):
            missing = ids[~found][:10].tolist()
            raise KeyError(f'Ids not in point set: {missing}')
        return self._sorter[np.searchsorted(self._sorted_ids, ids)]

    def take(self, positions):
        'A subset by position; the original relative order is kept'
        positions = np.unique(np.asarray(positions, dtype=np.int64))
        return PointSet(self.coords[positions], self.ids[positions],
                        scale=self.scale)

    def select(self, ids):
        'A subset by id; the original relative order is kept'
        return self.take(self.positions_of(ids))

    @functools.cached_property
    def delta_diameter(self):
        'Δ: the maximum pairwise distance'
        return diameter(self.coords)

    @functools.cached_property
    def min_pair_dist(self):
        'The minimum pairwise distance (1 after normalization)'
        if self.n < 2:
            return math.inf
        return closest_pair(self.coords)[2]


def dist(p, q):
    '''
    Euclidean distance between two points

    Raises
    ------
    DimensionMismatch
    '''
    p, q = _as_coords(p), _as_coords(q)
    if p.shape != q.shape:
        raise DimensionMismatch(f'Dimensions differ: {len(p)} != {len(q)}')
    return float(np.sqrt(np.sum((p - q) ** 2)))


def dist_to_set(p, points):
    '''
    Minimum distance from ``p`` to a member of ``points``

    Raises
    ------
    EmptySet
    DimensionMismatch
    '''
    if not len(points):
        raise EmptySet('Distance to an empty set is undefined')
    p = _as_coords(p)
    if len(p) != points.dim:
        raise DimensionMismatch(
            f'Dimensions differ: {len(p)} != {points.dim}')
    return float(np.min(np.sqrt(np.sum((points.coords - p) ** 2, axis=1))))


def nearest_neighbors(points, targets):
    '''
    For every point, the distance to and position of its nearest target

    Parameters
    ----------
    points : PointSet
    targets : PointSet
        Nonempty

    Returns
    -------
    distances : np.ndarray
    positions : np.ndarray
        Positions into ``targets``
    '''
    if not len(targets):
        raise EmptySet('No targets given')
    if points.dim != targets.dim:
        raise DimensionMismatch(
            f'Dimensions differ: {points.dim} != {targets.dim}')
    if not len(points):
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    tree = scipy.spatial.cKDTree(targets.coords)
    distances, positions = tree.query(points.coords, k=1)
    return np.asarray(distances, dtype=float), np.asarray(positions,
                                                          dtype=np.int64)


def cost(points, centers):
    '''
    COST(P, S): the largest distance from a point to its nearest center

    Parameters
    ----------
    points : PointSet
    centers : PointSet
        Need not be a subset of ``points``

    Raises
    ------
    EmptySet
        If ``centers`` is empty
    '''
    if not len(centers):
        raise EmptySet('COST against an empty center set is undefined')
    if not len(points):
        return 0.0
    distances, _ = nearest_neighbors(points, centers)
    return float(distances.max())


def closest_pair(coords):
    '''
    The closest pair of rows in ``coords``

    Returns
    -------
    i, j : int
        Row positions, ``i < j``
    distance : float

    Raises
    ------
    DuplicatePoints
        If two rows coincide
    '''
    coords = np.asarray(coords, dtype=float)
    if len(coords) < 2:
        raise InvalidParams('A closest pair needs at least two points')

    tree = scipy.spatial.cKDTree(coords)
    distances, neighbors = tree.query(coords, k=2)
    first = int(np.argmin(distances[:, 1]))
    distance = float(distances[first, 1])
    other = int(neighbors[first, 1])
    if distance == 0.0:
        raise DuplicatePoints(
            f'Rows {min(first, other)} and {max(first, other)} coincide')
    return min(first, other), max(first, other), distance


def _chunked_max_distance(coords, chunk=1024):
    best = 0.0
    for start in range(0, len(coords), chunk):
        block = scipy.spatial.distance.cdist(coords[start:start + chunk],
                                             coords[start:])
        best = max(best, float(block.max()))
    return best


def diameter(coords):
    'Maximum pairwise distance among the rows of ``coords``'
    coords = np.asarray(coords, dtype=float)
    if len(coords) < 2:
        return 0.0
    if coords.shape[1] == 1:
        return float(coords.max() - coords.min())
    if len(coords) <= PAIR_SCAN_LIMIT:
        return float(scipy.spatial.distance.pdist(coords).max())

    # The farthest pair lies on the convex hull
    try:
        hull = scipy.spatial.ConvexHull(coords)
    except scipy.spatial.QhullError:
        logger.debug('Degenerate hull; scanning all pairs for the diameter')
        return _chunked_max_distance(coords)
    return _chunked_max_distance(coords[hull.vertices])


def normalize(raw_points):
    '''
    Rescale a point set so that the minimum pairwise distance is 1

    Parameters
    ----------
    raw_points : PointSet or sequence of Point
        At least two points, no duplicated coordinates

    Returns
    -------
    PointSet
        ``scale`` holds the factor applied to the coordinates

    Raises
    ------
    DuplicatePoints
    '''
    if not isinstance(raw_points, PointSet):
        raw_points = PointSet.from_points(raw_points)
    if raw_points.n < 2:
        raise InvalidParams('Normalization needs at least two points')
    if raw_points.dim > MAX_DIMENSION:
        logger.warning('Dimension %d is outside of the supported envelope '
                       '(d <= %d)', raw_points.dim, MAX_DIMENSION)

    _, _, min_dist = closest_pair(raw_points.coords)
    factor = 1.0 / min_dist
    logger.debug('Normalizing %d points by %g', raw_points.n, factor)
    return PointSet(raw_points.coords / min_dist, raw_points.ids,
                    scale=raw_points.scale * factor)


def load_points(filename):
    '''
    Load a point file: one point per line, whitespace-separated decimals

    The zero-based line index is the point id.  Blank lines and lines
    starting with ``#`` are skipped but keep their line number.

    Raises
    ------
    PointFileError
        On ragged or unparsable rows
    '''
    coords = []
    ids = []
    dim = None
    with open(filename, 'rt') as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            try:
                row = [float(value) for value in line.split()]
            except ValueError as ex:
                raise PointFileError(
                    f'{filename}:{lineno + 1}: {ex}') from None
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise PointFileError(
                    f'{filename}:{lineno + 1}: ragged row ({len(row)} '
                    f'coordinates, expected {dim})'
                )
            coords.append(row)
            ids.append(lineno)

    if not coords:
        raise PointFileError(f'{filename}: no points')
    return PointSet(coords, ids)


def save_points(filename, points):
    '''
    Write ``points`` in the point file format

    Points are written in id order on the line whose index is their id;
    gaps in the ids become ``#`` lines, so `load_points` gives back the same
    ids.

    Raises
    ------
    InvalidParams
        If an id is negative
    '''
    order = np.argsort(points.ids, kind='stable')
    ids = points.ids[order]
    if len(ids) and ids[0] < 0:
        raise InvalidParams(f'Point ids must be nonnegative; got {ids[0]}')
    path = pathlib.Path(filename)
    with open(path, 'wt') as f:
        line = 0
        for point_id, row in zip(ids, points.coords[order]):
            f.write('#\n' * int(point_id - line))
            f.write(' '.join(f'{value:.17g}' for value in row))
            f.write('\n')
            line = point_id + 1
    return path
