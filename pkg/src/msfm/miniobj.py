"""Mini object store: transforms on the write path, shards across OSDs.

The IO application of this package.  `put` optionally compresses the
object or erasure-codes it into k+m shards before writing to simulated
OSD targets; `get` reverses the transform, reading any k live shards in
the EC case.  Every transform runs through the client SDK — either an
in-process client (the default) or a caller-supplied remote client —
so the store behaves identically regardless of where the function
executes, and stored bytes are identical either way.

Placement is deterministic: shard i of an object lands on the
(crc32(name) + i)-th live OSD, counting modulo the live set in id
order.  CRC-32 rather than Python's hash() because the latter is
randomized per process and placement must be reproducible.

Each object's manifest records everything `get` needs (transform, raw
length, padding, per-shard placement); there is no other metadata.
Manifests serialize to canonical JSON — sorted keys, two-space indent —
so equal manifests have equal encodings.

OSD targets hold an in-memory map by default, or a directory of files
(keys percent-encoded) when the store is rooted on disk; a `.down`
marker keeps the alive flag persistent for the CLI.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import threading
import urllib.parse
import zlib
from dataclasses import dataclass
from pathlib import Path

from . import codec as codec_mod
from .client import Client, ClientConfig
from .protocol import CompressParams, EcDecodeParams, EcEncodeParams, FunctionId

MANIFEST_VERSION = 1

TRANSFORM_NONE = "none"
TRANSFORM_COMPRESS = "compress"
TRANSFORM_EC = "ec"


class StoreError(Exception):
    """Base class for object-store errors."""


class PlacementError(StoreError):
    """Not enough live OSDs to place the object."""


class NotFound(StoreError):
    """Unknown object, OSD id, or unreadable blob."""


class Unrecoverable(StoreError):
    """EC object with fewer than k live shards remaining."""


@dataclass(frozen=True)
class ObjectPolicy:
    """What to do to an object on the way in, and where that code runs.

    `client` is None for in-process execution or a connected remote
    Client; it never enters the manifest.
    """

    transform: str = TRANSFORM_NONE
    codec_id: int = codec_mod.CODEC_RLE0
    k: int = 0
    m: int = 0
    client: Client | None = None

    def __post_init__(self) -> None:
        if self.transform not in (TRANSFORM_NONE, TRANSFORM_COMPRESS, TRANSFORM_EC):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.transform == TRANSFORM_EC and not (
            self.k >= 1 and self.m >= 0 and self.k + self.m <= 32
        ):
            raise ValueError(f"invalid ec parameters k={self.k} m={self.m}")

    @staticmethod
    def none(client: Client | None = None) -> "ObjectPolicy":
        return ObjectPolicy(transform=TRANSFORM_NONE, client=client)

    @staticmethod
    def compress(
        codec_id: int = codec_mod.CODEC_RLE0, client: Client | None = None
    ) -> "ObjectPolicy":
        return ObjectPolicy(
            transform=TRANSFORM_COMPRESS, codec_id=codec_id, client=client
        )

    @staticmethod
    def ec(k: int, m: int, client: Client | None = None) -> "ObjectPolicy":
        return ObjectPolicy(transform=TRANSFORM_EC, k=k, m=m, client=client)


@dataclass(frozen=True)
class Placement:
    osd: int
    key: str
    length: int


@dataclass(frozen=True)
class ObjectManifest:
    """Everything needed to read an object back: no hidden state."""

    name: str
    raw_len: int
    transform: dict
    placements: tuple[Placement, ...]
    shard_size: int = 0
    padding: int = 0
    version: int = MANIFEST_VERSION

    def to_json(self) -> str:
        record = {
            "version": self.version,
            "name": self.name,
            "raw_len": self.raw_len,
            "transform": self.transform,
            "shard_size": self.shard_size,
            "padding": self.padding,
            "placements": [
                {"osd": p.osd, "key": p.key, "len": p.length}
                for p in self.placements
            ],
        }
        return json.dumps(record, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ObjectManifest":
        record = json.loads(text)
        if record.get("version") != MANIFEST_VERSION:
            raise StoreError(f"unsupported manifest version {record.get('version')}")
        return cls(
            name=record["name"],
            raw_len=record["raw_len"],
            transform=record["transform"],
            placements=tuple(
                Placement(p["osd"], p["key"], p["len"]) for p in record["placements"]
            ),
            shard_size=record["shard_size"],
            padding=record["padding"],
        )


class OsdTarget:
    """One simulated storage daemon: a keyed blob map, possibly on disk."""

    def __init__(self, osd_id: int, directory: Path | None = None):
        self.id = osd_id
        self._dir = directory
        self._blobs: dict[str, bytes] = {}
        self._alive = True
        self._lock = threading.Lock()
        if directory is not None:
            directory.mkdir(parents=True, exist_ok=True)

    @property
    def alive(self) -> bool:
        if self._dir is not None:
            return not (self._dir / ".down").exists()
        return self._alive

    def set_alive(self, alive: bool) -> None:
        if self._dir is not None:
            marker = self._dir / ".down"
            if alive:
                marker.unlink(missing_ok=True)
            else:
                marker.touch()
        else:
            self._alive = alive

    def _path(self, key: str) -> Path:
        assert self._dir is not None
        return self._dir / urllib.parse.quote(key, safe="")

    def write(self, key: str, data: bytes) -> None:
        if not self.alive:
            raise NotFound(f"osd {self.id} is down")
        with self._lock:
            if self._dir is not None:
                self._path(key).write_bytes(data)
            else:
                self._blobs[key] = data

    def read(self, key: str) -> bytes:
        if not self.alive:
            raise NotFound(f"osd {self.id} is down")
        with self._lock:
            if self._dir is not None:
                path = self._path(key)
                if not path.exists():
                    raise NotFound(f"osd {self.id} has no blob {key!r}")
                return path.read_bytes()
            if key not in self._blobs:
                raise NotFound(f"osd {self.id} has no blob {key!r}")
            return self._blobs[key]


@dataclass
class StoreStats:
    puts: int = 0
    gets: int = 0
    raw_bytes: int = 0
    stored_bytes: int = 0


class ObjectStore:
    """Object namespace over a fixed set of OSD targets."""

    def __init__(self, osd_count: int = 6, root: Path | str | None = None):
        if osd_count < 1:
            raise ValueError("need at least one OSD")
        self._root = Path(root) if root is not None else None
        self.osds = [
            OsdTarget(i, self._root / f"osd-{i:03d}" if self._root else None)
            for i in range(osd_count)
        ]
        self._manifests: dict[str, ObjectManifest] = {}
        self._rr = itertools.count()
        self._local = Client(ClientConfig(mode="in-process"))
        self.stats = StoreStats()
        self._lock = threading.Lock()
        if self._root is not None:
            (self._root / "manifests").mkdir(parents=True, exist_ok=True)

    # --- OSD administration -------------------------------------------------

    def _osd(self, osd_id: int) -> OsdTarget:
        if not 0 <= osd_id < len(self.osds):
            raise NotFound(f"no osd with id {osd_id}")
        return self.osds[osd_id]

    def kill_osd(self, osd_id: int) -> None:
        self._osd(osd_id).set_alive(False)

    def revive_osd(self, osd_id: int) -> None:
        self._osd(osd_id).set_alive(True)

    def live_osds(self) -> list[OsdTarget]:
        return [osd for osd in self.osds if osd.alive]

    # --- manifest persistence --------------------------------------------------

    def _manifest_path(self, name: str) -> Path:
        assert self._root is not None
        return self._root / "manifests" / (urllib.parse.quote(name, safe="") + ".json")

    def _save_manifest(self, manifest: ObjectManifest) -> None:
        with self._lock:
            self._manifests[manifest.name] = manifest
        if self._root is not None:
            self._manifest_path(manifest.name).write_text(manifest.to_json())

    def manifest(self, name: str) -> ObjectManifest:
        with self._lock:
            if name in self._manifests:
                return self._manifests[name]
        if self._root is not None:
            path = self._manifest_path(name)
            if path.exists():
                return ObjectManifest.from_json(path.read_text())
        raise NotFound(f"no object named {name!r}")

    # --- data path ------------------------------------------------------------

    def put(self, name: str, data: bytes, policy: ObjectPolicy) -> ObjectManifest:
        """Transform and store one object, replacing any previous version.

        Raises:
            PlacementError: No live OSD (blob) or fewer than k+m live
                OSDs (EC).
            ClientError subtypes: The transform itself failed.
        """
        if not name:
            raise ValueError("object name must be nonempty")
        client = policy.client or self._local
        if policy.transform == TRANSFORM_EC:
            manifest = self._put_ec(name, data, policy, client)
        else:
            manifest = self._put_blob(name, data, policy, client)
        self._save_manifest(manifest)
        with self._lock:
            self.stats.puts += 1
            self.stats.raw_bytes += len(data)
            self.stats.stored_bytes += sum(p.length for p in manifest.placements)
        return manifest

    def _put_blob(
        self, name: str, data: bytes, policy: ObjectPolicy, client: Client
    ) -> ObjectManifest:
        if policy.transform == TRANSFORM_COMPRESS:
            blob = client.call(
                FunctionId.COMPRESS, CompressParams(policy.codec_id), data
            )
            transform = {"kind": TRANSFORM_COMPRESS, "codec_id": policy.codec_id}
        else:
            blob = data
            transform = {"kind": TRANSFORM_NONE}
        live = self.live_osds()
        if not live:
            raise PlacementError("no live OSD to hold the blob")
        target = live[next(self._rr) % len(live)]
        key = f"{name}/blob"
        target.write(key, blob)
        return ObjectManifest(
            name=name,
            raw_len=len(data),
            transform=transform,
            placements=(Placement(target.id, key, len(blob)),),
        )

    def _put_ec(
        self, name: str, data: bytes, policy: ObjectPolicy, client: Client
    ) -> ObjectManifest:
        k, m = policy.k, policy.m
        live = self.live_osds()
        if len(live) < k + m:
            raise PlacementError(
                f"ec({k},{m}) needs {k + m} live OSDs, have {len(live)}"
            )
        shard_size = max(1, -(-len(data) // k))
        padded = data.ljust(k * shard_size, b"\x00")
        padding = len(padded) - len(data)
        shards_blob = client.call(FunctionId.EC_ENCODE, EcEncodeParams(k, m), padded)
        offset = zlib.crc32(name.encode("utf-8"))
        placements = []
        for i in range(k + m):
            shard = shards_blob[i * shard_size : (i + 1) * shard_size]
            target = live[(offset + i) % len(live)]
            key = f"{name}/{i}"
            target.write(key, shard)
            placements.append(Placement(target.id, key, len(shard)))
        return ObjectManifest(
            name=name,
            raw_len=len(data),
            transform={"kind": TRANSFORM_EC, "k": k, "m": m},
            placements=tuple(placements),
            shard_size=shard_size,
            padding=padding,
        )

    def get(self, name: str, client: Client | None = None) -> bytes:
        """Read an object back, reversing its transform.

        Args:
            name: Object name from a previous put.
            client: Optional remote client to run the reverse transform
                on; defaults to in-process execution (the bytes are
                identical either way).

        Raises:
            NotFound: Unknown name, or a none/compress blob whose
                holder is dead or lost the blob.
            Unrecoverable: EC object with fewer than k readable shards.
        """
        manifest = self.manifest(name)
        client = client or self._local
        with self._lock:
            self.stats.gets += 1
        kind = manifest.transform["kind"]
        if kind == TRANSFORM_EC:
            return self._get_ec(manifest, client)
        placement = manifest.placements[0]
        blob = self._osd(placement.osd).read(placement.key)
        if kind == TRANSFORM_COMPRESS:
            return client.call(
                FunctionId.DECOMPRESS,
                CompressParams(manifest.transform["codec_id"]),
                blob,
            )
        return blob

    def _get_ec(self, manifest: ObjectManifest, client: Client) -> bytes:
        k = manifest.transform["k"]
        m = manifest.transform["m"]
        size = manifest.shard_size
        present: list[tuple[int, bytes]] = []
        for i, placement in enumerate(manifest.placements):
            try:
                present.append((i, self._osd(placement.osd).read(placement.key)))
            except NotFound:
                continue
            if len(present) == k:
                break  # any k shards suffice
        if len(present) < k:
            raise Unrecoverable(
                f"{manifest.name!r}: only {len(present)} of {k + m} shards "
                f"readable, need {k}"
            )
        bitmap = 0
        for i, _ in present:
            bitmap |= 1 << i
        payload = b"".join(shard for _, shard in present)
        padded = client.call(
            FunctionId.EC_DECODE, EcDecodeParams(k, m, size, bitmap), payload
        )
        return padded[: manifest.raw_len]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="msfm-obj", description="Poke at a directory-backed object store."
    )
    parser.add_argument(
        "--root", required=True, metavar="DIR", help="store root directory"
    )
    parser.add_argument(
        "--osds", type=int, default=6, metavar="N", help="OSD count (default 6)"
    )
    parser.add_argument(
        "--server",
        metavar="ADDR:PORT",
        help="run transforms on this server instead of in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_put = sub.add_parser("put", help="store a file as an object")
    p_put.add_argument("name")
    p_put.add_argument("file", help="input path, or - for stdin")
    p_put.add_argument(
        "--transform",
        default="none",
        choices=["none", "rle0", "lz", "ec"],
        help="write-path transform (default none)",
    )
    p_put.add_argument("--k", type=int, default=4)
    p_put.add_argument("--m", type=int, default=2)

    p_get = sub.add_parser("get", help="read an object back")
    p_get.add_argument("name")
    p_get.add_argument("out", help="output path, or - for stdout")

    p_kill = sub.add_parser("kill-osd", help="mark an OSD dead")
    p_kill.add_argument("id", type=int)
    p_rev = sub.add_parser("revive-osd", help="mark an OSD alive")
    p_rev.add_argument("id", type=int)

    args = parser.parse_args(argv)
    store = ObjectStore(osd_count=args.osds, root=args.root)

    client = None
    if args.server:
        host, _, port = args.server.rpartition(":")
        client = Client(
            ClientConfig(mode="remote", address=(host or "127.0.0.1", int(port)))
        )

    try:
        if args.command == "put":
            data = (
                sys.stdin.buffer.read()
                if args.file == "-"
                else Path(args.file).read_bytes()
            )
            if args.transform == "none":
                policy = ObjectPolicy.none(client)
            elif args.transform == "ec":
                policy = ObjectPolicy.ec(args.k, args.m, client)
            else:
                policy = ObjectPolicy.compress(
                    codec_mod.CODEC_NAMES[args.transform], client
                )
            manifest = store.put(args.name, data, policy)
            stored = sum(p.length for p in manifest.placements)
            print(
                f"stored {args.name!r}: {manifest.raw_len} raw -> {stored} bytes "
                f"on OSDs {[p.osd for p in manifest.placements]}"
            )
        elif args.command == "get":
            data = store.get(args.name, client)
            if args.out == "-":
                sys.stdout.buffer.write(data)
            else:
                Path(args.out).write_bytes(data)
                print(f"read {args.name!r}: {len(data)} bytes")
        elif args.command == "kill-osd":
            store.kill_osd(args.id)
            print(f"osd {args.id} is down")
        else:
            store.revive_osd(args.id)
            print(f"osd {args.id} is up")
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if client is not None:
            client.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
