from .build import ThresholdConfig, build_complex, close_triangles
from .dtw import dtw_distance
from .events import Dwell, EventStream, Link, Physio, Proximity, read_jsonl, write_jsonl
from .simplicial import NodeKind, SimplicialComplex
from .topology import PlateauSelection, TopologySummary, betti_numbers, select_plateau, sweep_thresholds

__all__ = [
    "Dwell", "EventStream", "Link", "NodeKind", "Physio", "PlateauSelection", "Proximity",
    "SimplicialComplex", "ThresholdConfig", "TopologySummary", "betti_numbers", "build_complex",
    "close_triangles", "dtw_distance", "read_jsonl", "select_plateau", "sweep_thresholds", "write_jsonl",
]
