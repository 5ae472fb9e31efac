"""Federated training: weighting, aggregation, rounds and the wire protocol."""
from .aggregate import RoundPolicy, SiteWeight, aggregate, saturation_check, weights_normalize
from .protocol import decode_message, encode_message
from .rounds import FedResult, GlobalModel, LocalUpdate, RoundAggregator, run_federated
from .transport import (
    Coordinator,
    FederationError,
    RegistrationRejected,
    coordinator_serve,
    site_client_run,
)

__all__ = [
    "Coordinator", "FedResult", "FederationError", "GlobalModel", "LocalUpdate",
    "RegistrationRejected", "RoundAggregator", "RoundPolicy", "SiteWeight", "aggregate",
    "coordinator_serve", "decode_message", "encode_message", "run_federated",
    "saturation_check", "site_client_run", "weights_normalize",
]
