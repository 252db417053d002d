"""Versioned model checkpoints.

Each file is a torch.save blob with a format version, a kind tag, the model
config as plain values, the state dict, and a small extra dict for things the
inference wrapper needs (frame rates, lip indices, corpus geometry). Loading
uses weights_only=True, so checkpoints never execute pickled code.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .landmark import DecoderConfig, LandmarkDecoder, LandmarkSystem, build_decoder_model
from .tts import TtsConfig, TtsModel, TtsSystem, build_tts_model

FORMAT_VERSION = 1
KIND_TTS = "tts"
KIND_LANDMARK = "landmark"


class CheckpointError(RuntimeError):
    pass


def _save(path: str | Path, kind: str, config_dict: dict, state_dict, extra: dict) -> None:
    blob = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config_dict,
        "state_dict": state_dict,
        "extra": extra,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def _load(path: str | Path, kind: str) -> dict:
    try:
        blob = torch.load(Path(path), weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or "format_version" not in blob:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if blob["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {blob['format_version']}, expected {FORMAT_VERSION}"
        )
    if blob.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {blob.get('kind')!r} model, expected {kind!r}")
    return blob


def save_tts(path: str | Path, model: TtsModel, extra: dict | None = None) -> None:
    _save(path, KIND_TTS, asdict(model.config), model.state_dict(), dict(extra or {}))


def load_tts(path: str | Path) -> tuple[TtsSystem, dict]:
    blob = _load(path, KIND_TTS)
    config = TtsConfig(**blob["config"])
    model = build_tts_model(config)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return TtsSystem(model), blob["extra"]


def save_landmark(
    path: str | Path,
    system: LandmarkSystem,
    mode: str,
    extra: dict | None = None,
) -> None:
    merged = {"fps": system.fps, "lip_indices": list(system.lip_indices), "mode": mode}
    merged.update(extra or {})
    _save(path, KIND_LANDMARK, asdict(system.config), system.model.state_dict(), merged)


def load_landmark(path: str | Path) -> tuple[LandmarkSystem, str, dict]:
    blob = _load(path, KIND_LANDMARK)
    config = DecoderConfig(**blob["config"])
    model = build_decoder_model(config)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    extra = blob["extra"]
    system = LandmarkSystem(
        model, fps=extra["fps"], lip_indices=tuple(extra["lip_indices"])
    )
    return system, extra.get("mode", "mixed"), extra
