import struct
from pathlib import Path

import numpy as np
import pytest

SR = 16000


def write_wav_f32(path: Path, samples: np.ndarray, sr: int = SR) -> None:
    samples = np.asarray(samples, dtype=np.float32)
    data = samples.tobytes()
    n = len(data)
    blob = b"RIFF" + struct.pack("<I", 36 + n) + b"WAVE"
    blob += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, sr, sr * 4, 4, 32)
    blob += b"data" + struct.pack("<I", n)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob + data)


def write_pair_dataset(root: Path, pairs: list[dict], snr_floor: float) -> Path:
    """Fabricate a minimal generated-pair dataset layout."""
    import json

    root = Path(root)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    ids = []
    for i, pair in enumerate(pairs):
        item_id = f"{i:05d}"
        ids.append(item_id)
        for side in ("support", "query"):
            write_wav_f32(root / "scenes" / f"{item_id}_{side}.wav",
                          pair[side]["samples"])
        payload = {
            "id": item_id,
            "support": {
                "wav": f"scenes/{item_id}_support.wav",
                "duration": len(pair["support"]["samples"]) / SR,
                "events": pair["support"]["events"],
                "mask_frame_rate": 50.0,
                "provenance": {"events": pair["support"].get("prov", [])},
            },
            "query": {
                "wav": f"scenes/{item_id}_query.wav",
                "duration": len(pair["query"]["samples"]) / SR,
                "events": pair["query"]["events"],
                "mask_frame_rate": 50.0,
                "provenance": {"events": pair["query"].get("prov", [])},
            },
        }
        (root / "scenes" / f"{item_id}.json").write_text(json.dumps(payload))
    (root / "manifest.json").write_text(json.dumps({
        "kind": "scene-pairs",
        "config": {"snr_floor": snr_floor},
        "config_hash": "x",
        "seed": 0,
        "count": len(ids),
        "ids": ids,
    }))
    return root


@pytest.fixture
def mini_shard(tmp_path):
    rng = np.random.default_rng(0)

    def tone_scene(dur, spans, freq):
        x = 0.01 * rng.standard_normal(int(dur * SR))
        for a, b in spans:
            t = np.arange(int((b - a) * SR)) / SR
            x[int(a * SR) : int(a * SR) + len(t)] += 0.4 * np.sin(2 * np.pi * freq * t)
        return x

    pairs = []
    for i in range(3):
        freq = 600.0 + 400 * i
        pairs.append({
            "support": {
                "samples": tone_scene(4.0, [(0.5, 1.0), (2.0, 2.4)], freq),
                "events": [[0.5, 1.0], [2.0, 2.4]],
                "prov": [{"group": "target", "snr_db": -3.0 - i}],
            },
            "query": {
                "samples": tone_scene(2.0, [(0.8, 1.2)], freq),
                "events": [[0.8, 1.2]],
                "prov": [{"group": "target", "snr_db": -1.0}],
            },
        })
    return write_pair_dataset(tmp_path / "shard", pairs, snr_floor=-10.0)
