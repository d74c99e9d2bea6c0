"""
Labeled trace files.

A trace named `flight` is stored as three files side by side:

    flight.json      header: format version, environment name, metadata,
                     subcarrier count, whether ground-truth CSI is included
    flight.csv       one row per frame: frame, channel_ts, rssi, sensor_ts,
                     x, y, z, d, v, a, label, true_rssi
    flight.csi       little-endian complex128 blocks, N_sc values per frame,
                     measured CSI for all frames followed by ground-truth CSI
                     for all frames when present
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from phy.link import one_hot
from sources.base import ChannelState, ConfigurationError, FlightState
from sources.sync import LabeledTrace, TraceSample

logger = logging.getLogger(__name__)

TRACE_FORMAT_VERSION = 1
INDEX_COLUMNS = ["frame", "channel_ts", "rssi", "sensor_ts", "x", "y", "z", "d", "v", "a", "label", "true_rssi"]
_CSI_DTYPE = np.dtype("<c16")


def _paths(path: Path) -> tuple[Path, Path, Path]:
    path = Path(path)
    return path.with_suffix(".json"), path.with_suffix(".csv"), path.with_suffix(".csi")


def write_trace(trace: LabeledTrace, path: Path) -> Path:
    """Write the trace next to `path` (suffix ignored) and return the header path."""
    if not trace.samples:
        raise ValueError("Refusing to write an empty trace")
    header_path, index_path, csi_path = _paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)

    has_truth = all(s.true_channel is not None for s in trace.samples)
    n_sc = len(trace.samples[0].channel.csi)

    rows = []
    for n, s in enumerate(trace.samples):
        x, y, z = s.flight.position
        rows.append([
            n, s.channel.timestamp, s.channel.rssi, s.flight.timestamp,
            x, y, z, s.flight.d, s.flight.v, s.flight.a, s.mcs,
            s.true_channel.rssi if has_truth else np.nan,
        ])
    pd.DataFrame(rows, columns=INDEX_COLUMNS).to_csv(index_path, index=False)

    blocks = [s.channel.csi for s in trace.samples]
    if has_truth:
        blocks += [s.true_channel.csi for s in trace.samples]
    np.stack(blocks).astype(_CSI_DTYPE).tofile(csi_path)

    header = {
        "version": TRACE_FORMAT_VERSION,
        "environment_name": trace.environment_name,
        "metadata": trace.metadata,
        "n_subcarriers": n_sc,
        "frames": len(trace.samples),
        "has_true_channel": has_truth,
    }
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True))
    logger.info(f"Trace IO: Wrote {len(trace.samples)} frames to {header_path.with_suffix('')}")
    return header_path


def read_trace(path: Path) -> LabeledTrace:
    header_path, index_path, csi_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"No trace header at {header_path}") from None

    if header.get("version") != TRACE_FORMAT_VERSION:
        raise ConfigurationError(
            f"Unsupported trace format version {header.get('version')} (expected {TRACE_FORMAT_VERSION})"
        )

    index = pd.read_csv(index_path, float_precision="round_trip")
    if list(index.columns) != INDEX_COLUMNS:
        raise ConfigurationError(f"Trace index {index_path} has unexpected columns")

    n_frames, n_sc = header["frames"], header["n_subcarriers"]
    has_truth = header["has_true_channel"]
    csi = np.fromfile(csi_path, dtype=_CSI_DTYPE)
    expected = n_frames * n_sc * (2 if has_truth else 1)
    if csi.size != expected or len(index) != n_frames:
        raise ConfigurationError(f"Trace {header_path.with_suffix('')} is truncated or inconsistent")
    csi = csi.reshape(-1, n_sc)

    samples = []
    for n, row in enumerate(index.itertuples(index=False)):
        true_channel = None
        if has_truth:
            true_channel = ChannelState(csi[n_frames + n].copy(), float(row.true_rssi), float(row.channel_ts))
        samples.append(TraceSample(
            channel=ChannelState(csi[n].copy(), float(row.rssi), float(row.channel_ts)),
            flight=FlightState(
                timestamp=float(row.sensor_ts),
                position=(float(row.x), float(row.y), float(row.z)),
                d=float(row.d),
                v=float(row.v),
                a=float(row.a),
            ),
            label=one_hot(int(row.label)),
            true_channel=true_channel,
        ))
    return LabeledTrace(samples, header["environment_name"], header["metadata"])
