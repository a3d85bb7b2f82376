"""Dataset container, binary series format, and the synthetic benchmark
generator.

The STSF container is a small self-describing binary: an 8-byte magic,
a 4-byte little-endian header length, a UTF-8 JSON header, then the raw
little-endian payload in (step, node, channel) order.
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import SyntheticSpec
from .errors import ConfigError, DataFormatError

Array = np.ndarray

MAGIC = b"STSF0001"
_DTYPES = {"f32le": np.dtype("<f4"), "f64le": np.dtype("<f8")}
_GRAPH_ATTEMPTS = 50


@dataclass
class SeriesTensor:
    """A node-by-time-by-channel block of flow values, stored time-major:
    ``values`` has shape (n_steps, n_nodes, n_channels)."""

    values: Array
    name: str | None = None
    interval_minutes: float | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise DataFormatError(f"series values must be 3-d time-major, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataFormatError("series contains non-finite values")
        self.values = arr

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]


def save_series(series: SeriesTensor, path, *, extra_header: dict | None = None) -> None:
    """Write a series to an STSF file; ``load_series`` restores it bit-exactly."""
    arr = series.values
    dtype_tag = "f64le" if arr.dtype.itemsize == 8 else "f32le"
    header = {
        "nodes": series.n_nodes,
        "steps": series.n_steps,
        "channels": series.n_channels,
        "dtype": dtype_tag,
        "layout": "time_major",
    }
    if series.name is not None:
        header["name"] = series.name
    if series.interval_minutes is not None:
        header["interval_minutes"] = series.interval_minutes
    if extra_header:
        header.update(extra_header)
    header_bytes = json.dumps(header).encode("utf-8")
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_tag]).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_series(path) -> SeriesTensor:
    """Read an STSF file, validating magic, header, and payload size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise DataFormatError(
            f"not an STSF file: expected magic {MAGIC!r}, got {blob[:8]!r}"
        )
    (header_len,) = struct.unpack("<I", blob[8:12])
    header_end = 12 + header_len
    if len(blob) < header_end:
        raise DataFormatError(
            f"truncated header: declared {header_len} bytes, file holds {len(blob) - 12}"
        )
    try:
        header = json.loads(blob[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"header is not valid UTF-8 JSON: {exc}") from exc
    for key in ("nodes", "steps", "channels", "dtype", "layout"):
        if key not in header:
            raise DataFormatError(f"header is missing required key {key!r}")
    if header["layout"] != "time_major":
        raise DataFormatError(f"unsupported layout {header['layout']!r}")
    if header["dtype"] not in _DTYPES:
        raise DataFormatError(f"unsupported dtype {header['dtype']!r}")
    dtype = _DTYPES[header["dtype"]]
    nodes, steps, channels = header["nodes"], header["steps"], header["channels"]
    expected = nodes * steps * channels * dtype.itemsize
    payload = blob[header_end:]
    if len(payload) != expected:
        raise DataFormatError(
            f"payload size mismatch: header declares {expected} bytes "
            f"({steps} x {nodes} x {channels}), file holds {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=dtype).reshape(steps, nodes, channels)
    values = values.astype(dtype.newbyteorder("="), copy=True)
    if not np.all(np.isfinite(values)):
        raise DataFormatError("payload contains non-finite values")
    return SeriesTensor(
        values=values,
        name=header.get("name"),
        interval_minutes=header.get("interval_minutes"),
    )


def _connected(adjacency: Array) -> bool:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        i = queue.popleft()
        for j in np.nonzero(adjacency[i])[0]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def random_connected_graph(n_nodes: int, avg_degree: float, rng: np.random.Generator) -> Array:
    """Symmetric 0/1 adjacency of a connected sparse graph (no self-loops)."""
    p = min(1.0, avg_degree / max(1, n_nodes - 1))
    for _ in range(_GRAPH_ATTEMPTS):
        upper = rng.random((n_nodes, n_nodes)) < p
        adjacency = np.triu(upper, k=1)
        adjacency = (adjacency | adjacency.T).astype(np.float64)
        if _connected(adjacency):
            return adjacency
    raise ConfigError(
        f"no connected graph in {_GRAPH_ATTEMPTS} draws "
        f"(n_nodes={n_nodes}, avg_degree={avg_degree}); raise avg_degree"
    )


def generate_synthetic(spec: SyntheticSpec) -> tuple[SeriesTensor, Array]:
    """Synthetic traffic-like benchmark with a known ground-truth graph.

    Per node, a sum of sinusoids (random phase per node and period) drives
    the recurrence x[t+1] = (1 - alpha) * x[t] + alpha * rownorm(A) @ x[t]
    + base[t+1] + Gaussian noise. Each period's drive amplitude is scaled by
    2*sin(pi/p) so slow and fast components contribute comparably after the
    recurrence accumulates them. The per-step noise is the increment of an
    i.i.d. Gaussian field, so the mixing's marginally stable constant mode
    does not accumulate a random walk and the series level stays stationary;
    the increments still diffuse through the graph on later steps, which is
    what makes neighbor series more alike than non-neighbor series. The
    output is affinely mapped to a positive flow-like range. Returns the
    series and the true adjacency.
    """
    spec.validate()
    graph_rng = np.random.default_rng(spec.graph_seed)
    signal_rng = np.random.default_rng(spec.signal_seed)
    n, steps = spec.n_nodes, spec.n_steps

    adjacency = random_connected_graph(n, spec.avg_degree, graph_rng)
    degrees = adjacency.sum(axis=1, keepdims=True)
    rownorm = np.divide(adjacency, degrees, out=np.zeros_like(adjacency), where=degrees > 0)
    mix = (1.0 - spec.alpha) * np.eye(n) + spec.alpha * rownorm

    periods = np.asarray(spec.periods, dtype=np.float64)
    amplitudes = 2.0 * np.sin(np.pi / periods)
    phases = signal_rng.uniform(0.0, 2.0 * np.pi, size=(n, len(periods)))
    t_grid = np.arange(steps)[:, None, None]
    base = (amplitudes * np.sin(2.0 * np.pi * t_grid / periods + phases)).sum(axis=2)

    if spec.noise > 0:
        noise_field = signal_rng.standard_normal((steps, n)) * spec.noise
        shocks = np.diff(noise_field, axis=0)
    else:
        shocks = np.zeros((steps - 1, n))

    x = np.empty((steps, n), dtype=np.float64)
    x[0] = base[0]
    for t in range(steps - 1):
        x[t + 1] = mix @ x[t] + base[t + 1] + shocks[t]

    centered = (x - x.mean()) / max(x.std(), 1e-12)
    flow = 300.0 + 60.0 * centered
    series = SeriesTensor(
        values=flow[:, :, None],
        name=f"synthetic-n{n}-s{steps}",
        interval_minutes=5.0,
    )
    return series, adjacency
