"""Sparse proxy attention for point clouds: grid proxy sampling, vertex
association, table-based relative bias and a single trainable block."""

from .association import knn_linf_oracle, vertex_associate
from .block import (GridMeanFusion, block_backward, block_forward, global_fusion,
                    init_block_params, local_fusion_stub, proxy_init, sinusoidal_embed,
                    sp2t_block_forward)
from .core import (Aabb, AssociationList, Config, GridSpec, PointCloud, ProxyError, ProxySet,
                   compute_aabb, seeded_rng)
from .io import ingest_points, write_ply, write_xyz
from .sampling import (FixNumber, FixSize, Fps, ProxyBudgetError, SpatialWise, fps,
                       sample_proxies, spatial_wise_spacing)
from .spa import (Direction, dense_oracle, export_attention, sparse_softmax, spa_backward,
                  spa_flop_count, spa_forward, spa_similarity)
from .train import toy_train_step, train_toy
from .trb import BiasCache, TrbTable, load_table, save_table, trb_init, trb_lookup, trb_lookup_batch

__version__ = "0.1.0"
