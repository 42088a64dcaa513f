"""Station IQ storage and the aggregator-facing request protocol."""

from .client import (
    DiscontinuityError,
    FetchError,
    HttpEndpoint,
    LocalEndpoint,
    RangeEvicted,
    RetriesExhausted,
    backoff_delays,
    fetch_iq,
    station_status,
)
from .server import IqRequest, Response, StationServer, TransportError, n_request_samples
from .store import Lookup, OutOfOrderError, RingStore, StoreError
from .wire import (
    FLAG_COMPRESSED,
    FLAG_PARTIAL,
    FLAG_SUBBAND,
    HEADER,
    MAGIC,
    VERSION,
    IqResponseFrame,
    WireError,
    decode_frame,
    encode_frame,
)
