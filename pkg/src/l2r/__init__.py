"""Memory-based lifelong learning for first-stage retrieval at desk scale.

Submodules: ``geometry`` (PSS/ISD), ``lexical`` (BM25), ``encoder`` (hashed
linear dual encoder), ``losses``, ``memory``, ``selection``, ``index_store``,
``benchmark`` (session streams), ``metrics`` and ``runner``.
"""

from .benchmark import GeneratorConfig, Session, SessionStream, generate_synthetic_stream, load_external_stream
from .encoder import DualEncoder, FeatureVector, featurize
from .geometry import isd, pss
from .index_store import CostLedger, EmbeddingStore, projected_costs
from .lexical import InvertedIndex, tokenize
from .memory import MemoryBuffer, TempMemory, update_memory
from .metrics import PerfMatrix, lifelong_summary
from .runner import FeatureCache, RunConfig, run_stream, train_initial_session
from .selection import SelectionConfig, select_new_negatives

__version__ = "0.1.0"

__all__ = [
    "CostLedger", "DualEncoder", "EmbeddingStore", "FeatureCache", "FeatureVector", "GeneratorConfig", "InvertedIndex",
    "MemoryBuffer", "PerfMatrix", "RunConfig", "SelectionConfig", "Session", "SessionStream", "TempMemory",
    "featurize", "generate_synthetic_stream", "isd", "lifelong_summary", "load_external_stream",
    "projected_costs", "pss", "run_stream", "select_new_negatives", "tokenize", "train_initial_session",
    "update_memory",
]
