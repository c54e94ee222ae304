"""Personalised subgraph federated learning with auxiliary projection vectors."""

from .config import FederationConfig, load_config
from .graphdata import Graph, Partition, SbmConfig, gen_sbm, partition
from .orchestrator import run_federation

__all__ = ["FederationConfig", "Graph", "Partition", "SbmConfig", "gen_sbm", "load_config", "partition", "run_federation"]
__version__ = "0.1.0"
