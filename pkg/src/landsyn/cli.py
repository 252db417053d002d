"""Command line entry point.

Subcommands cover the whole workflow: generate a corpus, train the latent
chain, train a landmark decoder on top of it, run inference, score a
directory of predictions, benchmark inference speed, and render frames.

Option precedence is: built-in defaults, then a JSON config file given with
--config, then explicit command line flags. Every artifact-producing run
writes the fully resolved configuration and seed next to its output as a
``.run.json`` file so results can be reproduced without guessing.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_landmark, load_tts, save_landmark, save_tts
from .corpus import (
    CorpusConfig,
    build_face_layout,
    gen_corpus,
    load_manifest,
    oracle_articulate,
)
from .infer import (
    bench_paths,
    infer_as,
    infer_direct,
    infer_pipelined,
    infer_speech,
    infer_text,
)
from .landmark import DecoderConfig
from .landmark_train import MODE_STL_D, TRAIN_MODES, LandmarkTrainConfig, train_landmark_decoder
from .metrics import evaluate_many
from .render import render_frames, render_overview
from .tensorio import load_tensor, save_tensor
from .timing import durations_to_land
from .tts import TtsConfig
from .tts_train import TtsTrainConfig, train_tts
from .types import MODE_AS, MODE_STANDARD, LandmarkSequence, SpectralFrames, Z_U_DIM

log = logging.getLogger("landsyn")

TTS_CKPT_NAME = "tts.pt"


def _read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise SystemExit(f"config file {path} must hold a JSON object")
    return data


def _merge(defaults: dict, file_cfg: dict, cli_cfg: dict) -> dict:
    """defaults < config file < explicit CLI flags; unknown keys rejected."""
    resolved = dict(defaults)
    for source in (file_cfg, cli_cfg):
        for key, value in source.items():
            if key not in defaults:
                raise SystemExit(f"unknown option {key!r} (valid: {sorted(defaults)})")
            if value is not None:
                resolved[key] = value
    return resolved


def _write_run_record(out: Path, command: str, resolved: dict) -> None:
    record = {
        "command": command,
        "package_version": __version__,
        "resolved_config": resolved,
    }
    path = out.with_suffix(out.suffix + ".run.json") if out.suffix else out / "run.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, default=str) + "\n")


def _section(file_cfg: dict, name: str) -> dict:
    part = file_cfg.get(name, {})
    if not isinstance(part, dict):
        raise SystemExit(f"config section {name!r} must be a JSON object")
    return part


def _rates_extra(manifest) -> dict:
    return {"spec_fps": manifest.spec_fps, "land_fps": manifest.land_fps}


# --- gen-data -------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    defaults = asdict(CorpusConfig())
    defaults.pop("inventory")
    cli_cfg = {
        "num_utterances": args.utterances,
        "num_speakers": args.speakers,
        "num_paired_speakers": args.paired,
        "num_unseen_speakers": args.unseen,
        "num_emotions": args.emotions,
        "feat_dim": args.feat_dim,
        "spec_fps": args.spec_fps,
        "land_fps": args.land_fps,
        "constant_duration": args.constant_duration,
    }
    resolved = _merge(defaults, _read_config_file(args.config), cli_cfg)
    config = CorpusConfig(**resolved)
    out = Path(args.out)
    manifest = gen_corpus(config, seed=args.seed, out_dir=out)
    _write_run_record(out, "gen-data", {**resolved, "seed": args.seed})
    log.info(
        "wrote %d utterances (%d paired) to %s",
        len(manifest.records),
        len(manifest.select(paired_only=True)),
        out,
    )
    return 0


# --- train-tts ------------------------------------------------------------


def cmd_train_tts(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    file_cfg = _read_config_file(args.config)

    train_defaults = asdict(TtsTrainConfig())
    train_cli = {
        "steps": args.steps,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
    }
    train_resolved = _merge(train_defaults, _section(file_cfg, "train"), train_cli)
    train_resolved["adam_betas"] = tuple(train_resolved["adam_betas"])
    train_config = TtsTrainConfig(**train_resolved)

    mode = args.mode
    num_labels = (
        manifest.num_speakers - manifest.num_unseen_speakers
        if mode == MODE_STANDARD
        else manifest.num_emotions
    )
    model_defaults = asdict(
        TtsConfig(
            num_phonemes=manifest.inventory.num_phonemes,
            num_cond_labels=num_labels,
            feat_dim=manifest.feat_dim,
            mode=mode,
        )
    )
    model_cli = {
        "hidden_dim": args.hidden_dim,
        "latent_dim": args.latent_dim,
        "flow_steps": args.flow_steps,
    }
    model_resolved = _merge(model_defaults, _section(file_cfg, "model"), model_cli)
    model_config = TtsConfig(**model_resolved)

    log.info("training latent chain: mode=%s steps=%d", mode, train_config.steps)
    result = train_tts(
        manifest,
        train_config,
        model_config=model_config,
        mode=mode,
        log_every=max(1, train_config.steps // 10),
        progress=lambda i, b: log.info("step %d: %s", i, b.as_dict()),
    )
    out = Path(args.ckpt) / TTS_CKPT_NAME
    save_tts(
        out,
        result.model,
        extra={"data": str(args.manifest), "mode": mode, **_rates_extra(manifest)},
    )
    _write_run_record(
        out, "train-tts", {"mode": mode, "train": train_resolved, "model": model_resolved}
    )
    log.info("saved chain checkpoint to %s (final loss %.4f)", out, result.history[-1].total)
    return 0


# --- train-landmark -------------------------------------------------------


def cmd_train_landmark(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    tts, _ = load_tts(args.tts_ckpt)
    file_cfg = _read_config_file(args.config)

    train_defaults = asdict(LandmarkTrainConfig())
    train_cli = {
        "steps": args.steps,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
        "mode": args.mode,
    }
    train_resolved = _merge(train_defaults, _section(file_cfg, "train"), train_cli)
    train_resolved["adam_betas"] = tuple(train_resolved["adam_betas"])
    train_config = LandmarkTrainConfig(**train_resolved)

    in_dim = manifest.feat_dim if train_config.mode == MODE_STL_D else tts.config.latent_dim
    global_dim = tts.config.num_cond_labels if tts.config.mode == MODE_AS else Z_U_DIM
    model_defaults = asdict(
        DecoderConfig(in_dim=in_dim, num_points=manifest.num_keypoints, global_dim=global_dim)
    )
    model_cli = {
        "num_layers": args.layers,
        "channels": args.channels,
        "kernel_size": args.kernel,
    }
    model_resolved = _merge(model_defaults, _section(file_cfg, "model"), model_cli)
    decoder_config = DecoderConfig(**model_resolved)

    log.info("training landmark decoder: mode=%s steps=%d", train_config.mode, train_config.steps)
    result = train_landmark_decoder(
        manifest,
        tts,
        train_config,
        decoder_config=decoder_config,
        log_every=max(1, train_config.steps // 10),
        progress=lambda i, v: log.info("step %d: mse %.5f", i, v),
    )
    ckpt_dir = Path(args.ckpt) if args.ckpt else Path(args.tts_ckpt).parent
    out = ckpt_dir / f"landmark_{result.mode}.pt"
    save_landmark(
        out,
        result.system,
        mode=result.mode,
        extra={"data": str(args.manifest), **_rates_extra(manifest)},
    )
    _write_run_record(
        out, "train-landmark", {"train": train_resolved, "model": model_resolved}
    )
    log.info("saved decoder checkpoint to %s (final mse %.5f)", out, result.history[-1])
    return 0


# --- infer ----------------------------------------------------------------


def _parse_id_list(text: str) -> np.ndarray:
    candidate = Path(text)
    if candidate.is_file():
        text = candidate.read_text()
    try:
        ids = np.asarray([int(p) for p in text.replace(",", " ").split()], dtype=np.int64)
    except ValueError:
        raise SystemExit(f"cannot parse phoneme ids from {text!r}")
    if len(ids) == 0:
        raise SystemExit("empty phoneme sequence")
    return ids


def _load_checkpoints(args):
    ckpt_dir = Path(args.ckpt)
    tts_path = ckpt_dir / TTS_CKPT_NAME
    if not tts_path.is_file():
        raise SystemExit(f"no {TTS_CKPT_NAME} under {ckpt_dir}")
    tts, tts_extra = load_tts(tts_path)
    if getattr(args, "decoder", None):
        decoder_path = ckpt_dir / args.decoder
    else:
        found = sorted(ckpt_dir.glob("landmark_*.pt"))
        if len(found) != 1:
            raise SystemExit(
                f"expected exactly one landmark_*.pt under {ckpt_dir}, found "
                f"{[p.name for p in found]}; pick one with --decoder"
            )
        decoder_path = found[0]
    decoder, decoder_mode, dec_extra = load_landmark(decoder_path)
    spec_fps = tts_extra.get("spec_fps") or dec_extra.get("spec_fps")
    if not spec_fps:
        raise SystemExit("checkpoints carry no frame rates; retrain or pass --manifest")
    ratio = decoder.fps / float(spec_fps)
    return tts, decoder, decoder_mode, ratio, float(spec_fps)


def _infer_one(
    tts, decoder, mode, decoder_mode, phonemes, x, label, z_u, ratio, seed, temperature
):
    """Run one utterance through the requested path; returns (landmarks, spectral)."""
    direct = decoder_mode == MODE_STL_D
    if direct and mode in ("text", "pipelined"):
        raise SystemExit(
            "this decoder was trained on raw features (stl-d); it supports only "
            "speech-driven inference"
        )
    if mode == "as":
        if direct:
            z_u = tts.utterance_encode(x).mean
            return infer_direct(decoder, x, tts.bundle(label, z_u=z_u), ratio), None
        return infer_as(tts, decoder, x, label, ratio), None
    bundle = tts.bundle(label, z_u=z_u)
    if mode == "speech":
        if direct:
            return infer_direct(decoder, x, bundle, ratio), None
        return infer_speech(tts, decoder, x, bundle, ratio), None
    fn = infer_text if mode == "text" else infer_pipelined
    result = fn(tts, decoder, phonemes, bundle, ratio, seed=seed, temperature=temperature)
    return result.landmarks, result.spectral


def cmd_infer(args: argparse.Namespace) -> int:
    tts, decoder, decoder_mode, ratio, _ = _load_checkpoints(args)
    needs_text = args.mode in ("text", "pipelined")
    out = Path(args.out)

    sources = [s for s in (args.input, args.utt, args.split) if s is not None]
    if len(sources) != 1:
        raise SystemExit("give exactly one of --in, --utt, --split")
    if (args.utt or args.split) and not args.manifest:
        raise SystemExit("--utt and --split need --manifest")

    manifest = load_manifest(args.manifest) if args.manifest else None

    def run_record(record):
        x = manifest.spectral(record)
        if tts.config.mode == MODE_AS:
            label = record.emotion_id
            z_u = tts.utterance_encode(x).mean
        else:
            label = record.speaker_id
            z_u = tts.utterance_encode(x).mean
        phonemes = np.asarray(record.phonemes) if needs_text else None
        return _infer_one(
            tts, decoder, args.mode, decoder_mode, phonemes, x, label, z_u, ratio,
            args.seed, args.temperature,
        )

    written = []
    if args.split is not None:
        records = manifest.select(split=args.split)
        if not records:
            raise SystemExit(f"no records in split {args.split!r}")
        out.mkdir(parents=True, exist_ok=True)
        for record in records:
            landmarks, _ = run_record(record)
            path = out / f"{record.utt_id}.t1"
            save_tensor(path, landmarks.y)
            written.append(str(path))
    else:
        if args.utt is not None:
            matches = [r for r in manifest.records if r.utt_id == args.utt]
            if not matches:
                raise SystemExit(f"utterance {args.utt!r} not in manifest")
            landmarks, spectral = run_record(matches[0])
        elif needs_text:
            phonemes = _parse_id_list(args.input)
            if np.any(phonemes < 0) or np.any(phonemes >= tts.config.num_phonemes):
                raise SystemExit(
                    f"phoneme ids must lie in [0, {tts.config.num_phonemes})"
                )
            landmarks, spectral = _infer_one(
                tts, decoder, args.mode, decoder_mode, phonemes, None, args.label,
                None, ratio, args.seed, args.temperature,
            )
        else:
            x = SpectralFrames(load_tensor(args.input))
            z_u = tts.utterance_encode(x).mean
            landmarks, spectral = _infer_one(
                tts, decoder, args.mode, decoder_mode, None, x, args.label, z_u,
                ratio, args.seed, args.temperature,
            )
        out.parent.mkdir(parents=True, exist_ok=True)
        save_tensor(out, landmarks.y)
        written.append(str(out))
        if spectral is not None:
            spec_path = out.with_suffix(".spectral.t1")
            save_tensor(spec_path, spectral.values)
            written.append(str(spec_path))
        if args.render:
            png = out.with_suffix(".overview.png")
            render_overview(landmarks, png)
            written.append(str(png))

    _write_run_record(
        out,
        "infer",
        {
            "mode": args.mode,
            "decoder_mode": decoder_mode,
            "seed": args.seed,
            "temperature": args.temperature,
            "outputs": written,
        },
    )
    log.info("wrote %d file(s): %s", len(written), ", ".join(written[:4]))
    return 0


# --- eval -----------------------------------------------------------------


def _reference_landmarks(manifest, record) -> LandmarkSequence:
    """Stored landmarks when present, otherwise the clean articulation oracle."""
    if record.landmark_path is not None:
        return manifest.landmarks(record)
    layout = build_face_layout(manifest.num_keypoints, len(manifest.lip_indices))
    d_land = durations_to_land(np.asarray(record.durations_spec), manifest.ratio)
    return oracle_articulate(
        manifest.inventory,
        np.asarray(record.phonemes),
        d_land,
        layout,
        manifest.land_fps,
        speaker_id=record.speaker_id,
        emotion_id=record.emotion_id,
    )


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    pred_dir = Path(args.pred)
    files = sorted(pred_dir.glob("*.t1"))
    if not files:
        raise SystemExit(f"no .t1 prediction files under {pred_dir}")
    by_id = {r.utt_id: r for r in manifest.records}

    items = []
    for path in files:
        utt_id = path.name[: -len(".t1")]
        record = by_id.get(utt_id)
        if record is None:
            raise SystemExit(f"prediction {path.name} has no matching manifest record")
        pred = LandmarkSequence(
            y=load_tensor(path), fps=manifest.land_fps, lip_indices=manifest.lip_indices
        )
        items.append((utt_id, pred, _reference_landmarks(manifest, record)))

    report = evaluate_many(items, split=args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    _write_run_record(out, "eval", {"pred": str(pred_dir), "split": args.split})
    log.info("scored %d utterances", report.count)
    print(json.dumps(report.means, indent=2))
    return 0


# --- bench-rtf ------------------------------------------------------------


def cmd_bench_rtf(args: argparse.Namespace) -> int:
    tts, decoder, _, ratio, spec_fps = _load_checkpoints(args)
    manifest = load_manifest(args.manifest)
    records = manifest.select(split="eval") or manifest.select(split="train")
    record = max(records, key=lambda r: sum(r.durations_spec))
    x = manifest.spectral(record)
    label = record.speaker_id if tts.config.mode == MODE_STANDARD else record.emotion_id
    bundle = tts.bundle(label, z_u=tts.utterance_encode(x).mean)
    reports = bench_paths(
        tts,
        decoder,
        np.asarray(record.phonemes),
        x,
        bundle,
        ratio,
        spec_fps,
        runs=args.repeat,
        seed=args.seed,
    )
    if args.mode != "all":
        reports = {args.mode: reports[args.mode]}
    payload = {name: rep.as_dict() for name, rep in reports.items()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n")
    _write_run_record(
        out, "bench-rtf", {"repeat": args.repeat, "mode": args.mode, "utt": record.utt_id}
    )
    for name, rep in reports.items():
        log.info("%-9s median RTF %.5f", name, rep.median_rtf)
    print(json.dumps({k: v["median_rtf"] for k, v in payload.items()}, indent=2))
    return 0


# --- render ---------------------------------------------------------------


def cmd_render(args: argparse.Namespace) -> int:
    if (args.landmarks is None) == (args.utt is None):
        raise SystemExit("give exactly one of --landmarks or --utt")
    manifest = load_manifest(args.manifest)
    if args.utt is not None:
        matches = [r for r in manifest.records if r.utt_id == args.utt]
        if not matches:
            raise SystemExit(f"utterance {args.utt!r} not in manifest")
        seq = _reference_landmarks(manifest, matches[0])
        prefix = matches[0].utt_id
    else:
        y = load_tensor(args.landmarks)
        seq = LandmarkSequence(y=y, fps=manifest.land_fps, lip_indices=manifest.lip_indices)
        prefix = Path(args.landmarks).stem
    out = Path(args.out)
    written = render_frames(seq, out, stride=args.stride, limit=args.limit, prefix=prefix)
    overview = render_overview(seq, out / f"{prefix}.overview.png")
    log.info("wrote %d frames and %s", len(written), overview)
    return 0


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landsyn",
        description="Facial landmark generation from text or speech features.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with corpus fields")
    p.add_argument("--utterances", type=int)
    p.add_argument("--speakers", type=int)
    p.add_argument("--paired", type=int)
    p.add_argument("--unseen", type=int)
    p.add_argument("--emotions", type=int)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--spec-fps", type=float)
    p.add_argument("--land-fps", type=float)
    p.add_argument("--constant-duration", type=int)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-tts", help="train the latent text/speech chain")
    p.add_argument("--manifest", required=True, help="corpus directory or manifest file")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--mode", choices=[MODE_STANDARD, MODE_AS], default=MODE_STANDARD)
    p.add_argument("--config", help="JSON file with train/model sections")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--flow-steps", type=int)
    p.set_defaults(fn=cmd_train_tts)

    p = sub.add_parser("train-landmark", help="train the landmark decoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tts-ckpt", required=True, help="path to the chain checkpoint file")
    p.add_argument("--ckpt", help="output directory (default: alongside --tts-ckpt)")
    p.add_argument("--mode", choices=list(TRAIN_MODES))
    p.add_argument("--config", help="JSON file with train/model sections")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--kernel", type=int)
    p.set_defaults(fn=cmd_train_landmark)

    p = sub.add_parser("infer", help="generate landmarks from text or speech")
    p.add_argument("--mode", choices=["text", "speech", "pipelined", "as"], required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--in", dest="input", help="phoneme ids (text modes) or tensor file")
    p.add_argument("--out", required=True, help="output tensor path, or directory with --split")
    p.add_argument("--decoder", help="decoder checkpoint filename inside --ckpt")
    p.add_argument("--manifest", help="corpus for --utt/--split inputs")
    p.add_argument("--utt", help="drive from one corpus utterance")
    p.add_argument("--split", help="drive every utterance in a corpus split")
    p.add_argument("--label", type=int, default=0, help="speaker (standard) or emotion (AS)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.667)
    p.add_argument("--render", action="store_true")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score a directory of predictions")
    p.add_argument("--pred", required=True, help="directory of <utt_id>.t1 files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--split", default="eval", help="label recorded in the report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench-rtf", help="measure real-time factors per path")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["all", "text", "speech", "pipelined"], default="all")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--decoder", help="decoder checkpoint filename inside --ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench_rtf)

    p = sub.add_parser("render", help="draw landmark frames as PNGs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--landmarks", help="tensor file with [T, N, 2] keypoints")
    p.add_argument("--utt", help="render a corpus utterance's reference")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
