'''
What every pipeline stage needs to know about the run it is part of.
'''
import dataclasses
import logging
import math
from typing import Optional

import numpy as np

from .config import Constants
from .exceptions import InvalidParams
from .lsh import LshParams, lane_dtype
from .mpc import MpcCluster, MpcConfig, create_cluster, record_words


logger = logging.getLogger(__name__)


def point_dtype(dim):
    'Record layout of a point held by the main cluster'
    return np.dtype([
        ('id', np.int64),
        ('hub', np.int64),
        ('non_hub', np.int64),
        ('part', np.int64),
        ('coords', np.float64, (dim,)),
    ])


def point_records(points):
    'Point records for every member of ``points``'
    records = np.zeros(points.n, dtype=point_dtype(points.dim))
    records['id'] = points.ids
    records['hub'] = points.ids
    records['coords'] = points.coords
    return records


@dataclasses.dataclass(frozen=True)
class PipelineContext:
    '''
    Global parameters of a run, shared by every stage

    Attributes
    ----------
    n : int
        Size of the original input (drives S and the LSH calibration)
    dim : int
    delta_diameter : float
        Diameter of the original input; bounds every subset
    mpc : MpcConfig
    lsh : LshParams
        Template parameters with the calibrated c_rho and K
    constants : Constants
    cluster : MpcCluster, optional
        Simulated cluster holding the current point set; ``None`` runs the
        stages in-process
    '''
    n: int
    dim: int
    delta_diameter: float
    mpc: MpcConfig
    lsh: LshParams
    constants: Constants = Constants()
    cluster: Optional[MpcCluster] = None

    @classmethod
    def create(cls, points, *, delta=0.5, rho=0.5, seed=0, simulate=True,
               local_space_factor=4.0, bucket_width=4.0, c_rho=None,
               lsh_repetitions=None, lsh_trials=None, max_hubs_per_bucket=10,
               primitive_round_cost=1, max_workers=1, constants=None):
        '''
        Calibrate the hash family, size the machines, and load ``points``

        Parameters
        ----------
        points : PointSet
            The normalized input
        simulate : bool, optional
            Load the points onto a simulated cluster
        '''
        if not points.n:
            raise InvalidParams('A run needs at least one point')
        lsh = LshParams.for_points(
            points.n, rho,
            bucket_width_factor=bucket_width,
            c_rho=c_rho,
            L=lsh_repetitions,
            I=lsh_trials,
            max_hubs_per_bucket=max_hubs_per_bucket,
            seed=seed,
        )
        lane_words = record_words(lane_dtype(points.dim))
        mpc = MpcConfig(
            n=points.n,
            delta=delta,
            rho=rho,
            local_space_factor=local_space_factor,
            min_local_words=(max_hubs_per_bucket + 2) * lane_words,
            seed=seed,
            primitive_round_cost=primitive_round_cost,
            max_workers=max_workers,
        )
        context = cls(
            n=points.n,
            dim=points.dim,
            delta_diameter=max(points.delta_diameter, 1.0),
            mpc=mpc,
            lsh=lsh,
            constants=constants or Constants(),
        )
        logger.info('n=%d d=%d S=%d words, %d points per machine, '
                    'c_rho=%.2f L=%d K=%d I=%d', context.n, context.dim,
                    mpc.local_space_words, context.capacity, lsh.c_rho,
                    lsh.L, lsh.K, lsh.I)
        if simulate:
            context = context.with_cluster(context.load(points))
        return context

    @property
    def point_words(self):
        'Words per point record'
        return record_words(point_dtype(self.dim))

    @property
    def capacity(self):
        'Point records one machine can hold'
        return self.mpc.local_space_words // self.point_words

    @property
    def c_rho(self):
        return self.lsh.c_rho

    def machine_count(self, n_points):
        'Machines given to a cluster holding ``n_points`` points'
        return 4 * math.ceil(max(n_points, 1) / (self.capacity - 1)) + 2

    def load(self, points):
        'A fresh cluster holding ``points``'
        config = dataclasses.replace(
            self.mpc, machine_count=self.machine_count(points.n))
        return create_cluster(config, point_records(points))

    def spawn(self, section, points, seed):
        '''
        A context on a child cluster of ``section`` holding ``points``

        In-process contexts just get the new seed.
        '''
        context = self.with_seed(seed)
        if section is None:
            return context
        child = section.spawn(point_records(points),
                              machine_count=self.machine_count(points.n))
        return context.with_cluster(child)

    def with_cluster(self, cluster):
        return dataclasses.replace(self, cluster=cluster)

    def with_seed(self, seed):
        return dataclasses.replace(self, lsh=self.lsh.at_radius(self.lsh.r,
                                                                seed=seed),
                                   mpc=dataclasses.replace(self.mpc,
                                                           seed=seed))

    @property
    def seed(self):
        return self.mpc.seed
