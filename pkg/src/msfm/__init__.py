"""Storage function offload toolkit.

Compression and erasure coding as callable storage functions, runnable
in-process or behind a small framed TCP protocol, plus the object
store that uses them and a benchmark driver that compares the two
execution modes.
"""

__version__ = "0.1.0"

from .bench import BenchReport, BenchSpec
from .client import Client, ClientConfig
from .codec import CODEC_LZ, CODEC_RLE0, CODEC_STORED, compress, decompress
from .gfec import EcProfile, ShardSet, ec_decode, ec_encode
from .miniobj import ObjectPolicy, ObjectStore
from .protocol import Frame, decode_frame, encode_frame
from .server import Server, ServerConfig, default_registry

__all__ = [
    "__version__",
    "BenchReport",
    "BenchSpec",
    "CODEC_LZ",
    "CODEC_RLE0",
    "CODEC_STORED",
    "Client",
    "ClientConfig",
    "EcProfile",
    "Frame",
    "ObjectPolicy",
    "ObjectStore",
    "Server",
    "ServerConfig",
    "ShardSet",
    "compress",
    "decode_frame",
    "decompress",
    "default_registry",
    "ec_decode",
    "ec_encode",
    "encode_frame",
]
