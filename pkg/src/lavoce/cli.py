"""Command-line surface: mixing, enhancement, evaluation, verification.

Exit codes: 0 success, 1 usage error (bad flags or configuration), 2 data
error (missing or malformed input files), 3 verification failure from
`selftest`. Every command logs the seed, a hash of its effective
configuration, and the package version to stderr so runs can be audited.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import read_wav, write_melf, write_wav
from .corrupt import apply_condition, mix, parse_manifest
from .dsp import AudioParams, griffin_lim, log_mel, noisy_phase_invert
from .errors import LavoceError
from .metrics import (
    METRICS,
    EvalReport,
    MetricSpec,
    UtteranceReport,
    evaluate_utterance,
    external_metric_adapter,
)
from .neural import (
    EnhancerConfig,
    VocoderConfig,
    discriminator_manifest,
    enhancer_forward,
    enhancer_manifest,
    generator_manifest,
    init_weights,
    load_weights,
    save_weights,
    validate_manifest,
    vocoder_forward,
)
from .selftest import run_suites
from .video import load_roi, load_pgm_dir

log = logging.getLogger("lavoce")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

INVERSION_METHODS = ("vocoder", "griffin-lim", "noisy-phase")

EXTERNAL_METRIC_ENV = {
    "pesq_wb": ("LAVOCE_EXTERNAL_PESQ", "PESQ-WB"),
    "visqol": ("LAVOCE_EXTERNAL_VISQOL", "ViSQOL"),
}


class UsageError(Exception):
    """Invocation problem: bad flags, bad flag combinations, bad config."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route that to exit code 1.
    def error(self, message):
        raise UsageError(message)


# --- configuration -------------------------------------------------------

_AUDIO_KEYS = {f.name for f in dataclasses.fields(AudioParams)}
_ENHANCER_KEYS = set(EnhancerConfig().to_dict())
_VOCODER_KEYS = set(VocoderConfig().to_dict())
_TOP_KEYS = {
    "audio",
    "enhancer",
    "vocoder",
    "enhancer_weights",
    "vocoder_weights",
    "invert",
    "metrics",
    "condition",
    "manifest",
    "seed",
    "out_dir",
}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def load_pipeline_config(path) -> dict:
    """Parse a pipeline config JSON, rejecting unknown keys at every level."""
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, str(path))
    for section, keys in (
        ("audio", _AUDIO_KEYS),
        ("enhancer", _ENHANCER_KEYS),
        ("vocoder", _VOCODER_KEYS),
    ):
        if section in cfg:
            if not isinstance(cfg[section], dict):
                raise UsageError(f"{path}: {section!r} must be a JSON object")
            _reject_unknown(cfg[section], keys, f"{path} [{section}]")
    return cfg


def _audio_params(cfg: dict) -> AudioParams:
    try:
        return AudioParams(**cfg.get("audio", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad audio parameters: {exc}") from None


def _enhancer_config(d: dict) -> EnhancerConfig:
    _reject_unknown(d, _ENHANCER_KEYS, "enhancer config")
    try:
        return EnhancerConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad enhancer config: {exc}") from None


def _vocoder_config(d: dict) -> VocoderConfig:
    _reject_unknown(d, _VOCODER_KEYS, "vocoder config")
    try:
        return VocoderConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad vocoder config: {exc}") from None


def _config_digest(settings: dict) -> str:
    canon = json.dumps(settings, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _announce(command: str, seed, settings: dict) -> str:
    digest = _config_digest(settings)
    log.info(
        "lavoce %s %s seed=%s config_hash=%s", __version__, command, seed, digest
    )
    return digest


# --- mix ------------------------------------------------------------------


def _load_clip_sources(entry, rate: int):
    clean = read_wav(entry.clean_path, target_rate=rate)
    noises = [read_wav(p, target_rate=rate) for p in entry.noise_paths]
    intfs = [read_wav(p, target_rate=rate) for p in entry.interferer_paths]
    return clean, noises, intfs


def cmd_mix(args) -> int:
    cfg = load_pipeline_config(args.config) if args.config else {}
    params = _audio_params(cfg)
    manifest = args.manifest or cfg.get("manifest")
    if manifest is None:
        raise UsageError("mix requires --manifest")
    condition = args.condition if args.condition is not None else cfg.get("condition")
    out_dir = Path(args.out_dir or cfg.get("out_dir") or ".")
    seed = args.seed if args.seed is not None else cfg.get("seed")

    settings = {
        "command": "mix",
        "manifest": str(manifest),
        "condition": condition,
        "seed": seed,
        "out_dir": str(out_dir),
        "sample_rate": params.sample_rate,
    }
    digest = _announce("mix", seed, settings)

    try:
        entries = parse_manifest(manifest)
    except OSError as exc:
        raise LavoceError(f"cannot read manifest {manifest}: {exc}") from None
    except ValueError as exc:
        raise LavoceError(str(exc)) from None

    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    log_entries = []
    for entry in entries:
        try:
            if condition is not None:
                entry = apply_condition(entry, condition)
            if seed is not None:
                entry = dataclasses.replace(entry, seed=seed + entry.line_no)
            clean, noises, intfs = _load_clip_sources(entry, params.sample_rate)
            result = mix(clean, noises, intfs, entry.recipe())
        except (LavoceError, OSError, ValueError) as exc:
            raise LavoceError(f"{manifest}:{entry.line_no}: {exc}") from None
        utt = f"{entry.line_no:04d}_{Path(entry.clean_path).stem}"
        noisy_path = out_dir / "noisy" / f"{utt}.wav"
        clean_path = out_dir / "clean" / f"{utt}.wav"
        write_wav(noisy_path, result.noisy)
        write_wav(clean_path, result.clean)
        log_entries.append(
            {
                "utt": utt,
                "line": entry.line_no,
                "clean": entry.clean_path,
                "noises": list(entry.noise_paths),
                "interferers": list(entry.interferer_paths),
                "n_noises": len(entry.noise_paths),
                "n_interferers": len(entry.interferer_paths),
                "snr_db": entry.snr_db,
                "sir_db": entry.sir_db,
                "seed": entry.seed,
                "noise_gain": result.noise_gain,
                "interferer_gain": result.interferer_gain,
                "snr_measured_db": result.snr_measured,
                "sir_measured_db": result.sir_measured,
                "noisy_wav": str(noisy_path),
                "clean_wav": str(clean_path),
            }
        )
        log.info("mixed %s (snr %.2f dB, sir %s)", utt, entry.snr_db, entry.sir_db)

    log_path = out_dir / "mix_log.json"
    log_path.write_text(
        json.dumps(
            {
                "version": __version__,
                "config_hash": digest,
                "settings": settings,
                "entries": log_entries,
            },
            indent=2,
        )
    )
    print(f"wrote {len(log_entries)} mixture(s) and {log_path}")
    return EXIT_OK


# --- enhance ----------------------------------------------------------------


def _load_video(path):
    p = Path(path)
    if p.is_dir():
        return load_pgm_dir(p)
    return load_roi(p)


def _sidecar_model_config(sidecar: dict | None, expected_kind: str) -> dict | None:
    if not isinstance(sidecar, dict):
        return None
    kind = sidecar.get("model")
    if kind is not None and kind != expected_kind:
        raise LavoceError(
            f"weights file holds a {kind!r} model, expected {expected_kind!r}"
        )
    if isinstance(sidecar.get("config"), dict):
        return sidecar["config"]
    return None


def cmd_enhance(args) -> int:
    cfg = load_pipeline_config(args.config) if args.config else {}
    params = _audio_params(cfg)
    weights_path = args.weights or cfg.get("enhancer_weights")
    if weights_path is None:
        raise UsageError("enhance requires --weights")
    invert = args.invert or cfg.get("invert") or "griffin-lim"
    if invert not in INVERSION_METHODS:
        raise UsageError(
            f"unknown inversion method {invert!r}; choose from {INVERSION_METHODS}"
        )
    vocoder_weights = args.vocoder_weights or cfg.get("vocoder_weights")
    if args.out == "wav" and invert == "vocoder" and vocoder_weights is None:
        raise UsageError("--invert vocoder requires --vocoder-weights")
    out_dir = Path(args.out_dir or cfg.get("out_dir") or ".")

    bundle, sidecar = load_weights(weights_path)
    enh_dict = _sidecar_model_config(sidecar, "enhancer") or cfg.get("enhancer") or {}
    enh_cfg = _enhancer_config(enh_dict)
    if enh_cfg.n_mels != params.n_mels:
        raise UsageError(
            f"enhancer expects {enh_cfg.n_mels} mel bands, audio config has {params.n_mels}"
        )
    validate_manifest(bundle, enhancer_manifest(enh_cfg))

    clip = None
    if enh_cfg.visual_feat_dim > 0:
        if args.video is None:
            raise UsageError("this model is audio-visual: --video is required")
        clip = _load_video(args.video)

    settings = {
        "command": "enhance",
        "audio": str(args.audio),
        "video": str(args.video),
        "weights": str(weights_path),
        "vocoder_weights": str(vocoder_weights),
        "invert": invert,
        "out": args.out,
        "seed": args.seed,
        "enhancer": enh_cfg.to_dict(),
        "audio_params": dataclasses.asdict(params),
    }
    digest = _announce("enhance", args.seed, settings)

    wave = read_wav(args.audio, target_rate=params.sample_rate)
    pred = enhancer_forward(log_mel(wave, params), clip, bundle, enh_cfg)

    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.audio).stem
    mel_path = out_dir / f"{stem}_enhanced.mel"
    write_melf(mel_path, pred)
    outputs = {"mel": str(mel_path)}

    if args.out == "wav":
        if invert == "vocoder":
            voc_bundle, voc_side = load_weights(vocoder_weights)
            voc_dict = _sidecar_model_config(voc_side, "vocoder") or cfg.get("vocoder") or {}
            voc_cfg = _vocoder_config(voc_dict)
            validate_manifest(voc_bundle, generator_manifest(voc_cfg))
            out_wave = vocoder_forward(pred, voc_bundle, voc_cfg)
        elif invert == "griffin-lim":
            out_wave = griffin_lim(pred, iters=args.gl_iters)
        else:
            out_wave = noisy_phase_invert(pred, wave)
        wav_path = out_dir / f"{stem}_{invert.replace('-', '_')}.wav"
        write_wav(wav_path, out_wave, fmt="float32")
        outputs["wav"] = str(wav_path)

    log_path = out_dir / f"{stem}_enhance_log.json"
    log_path.write_text(
        json.dumps(
            {
                "version": __version__,
                "config_hash": digest,
                "settings": settings,
                "outputs": outputs,
            },
            indent=2,
        )
    )
    for kind, path in outputs.items():
        print(f"{kind}: {path}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------


def _metric_specs(names: list[str]) -> dict[str, MetricSpec]:
    specs = {}
    for name in names:
        if name in METRICS:
            specs[name] = METRICS[name]
        elif name in EXTERNAL_METRIC_ENV:
            env, display = EXTERNAL_METRIC_ENV[name]
            template = os.environ.get(env)
            if not template:
                raise UsageError(f"metric {name!r} needs the {env} environment variable")
            specs[name] = MetricSpec(
                external_metric_adapter(name, template), True, display
            )
        else:
            known = sorted(set(METRICS) | set(EXTERNAL_METRIC_ENV))
            raise UsageError(f"unknown metric {name!r}; choose from {known}")
    return specs


def _default_metric_names() -> list[str]:
    names = ["mcd"]
    for name, (env, _) in EXTERNAL_METRIC_ENV.items():
        if os.environ.get(env):
            names.append(name)
    names += ["stoi", "estoi"]
    return names


def _collect_pairs(ref, deg, noisy) -> list[tuple[str, Path, Path, Path]]:
    ref, deg, noisy = Path(ref), Path(deg), Path(noisy)
    if ref.is_dir() != deg.is_dir() or ref.is_dir() != noisy.is_dir():
        raise UsageError("--ref/--deg/--noisy must be all files or all directories")
    if not ref.is_dir():
        return [(deg.stem, ref, deg, noisy)]
    pairs = []
    for ref_path in sorted(ref.glob("*.wav")):
        utt = ref_path.stem
        pairs.append((utt, ref_path, deg / ref_path.name, noisy / ref_path.name))
    if not pairs:
        raise LavoceError(f"no .wav files under {ref}")
    return pairs


def _eval_one(utt, ref_path, deg_path, noisy_path, specs, rate) -> UtteranceReport:
    try:
        ref = read_wav(ref_path, target_rate=rate)
        deg = read_wav(deg_path, target_rate=rate)
        noisy = read_wav(noisy_path, target_rate=rate)
    except Exception as exc:  # itemize, never abort the batch
        msg = f"{type(exc).__name__}: {exc}"
        return UtteranceReport(utt, errors={name: msg for name in specs})
    return evaluate_utterance(utt, ref, noisy, deg, specs)


def cmd_eval(args) -> int:
    cfg = load_pipeline_config(args.config) if args.config else {}
    params = _audio_params(cfg)
    if args.metrics:
        names = [n.strip() for n in args.metrics.split(",") if n.strip()]
        if not names:
            raise UsageError("--metrics lists no metric names")
    else:
        names = cfg.get("metrics") or _default_metric_names()
    specs = _metric_specs(names)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")

    settings = {
        "command": "eval",
        "ref": str(args.ref),
        "deg": str(args.deg),
        "noisy": str(args.noisy),
        "metrics": names,
        "jobs": args.jobs,
        "sample_rate": params.sample_rate,
    }
    digest = _announce("eval", None, settings)

    pairs = _collect_pairs(args.ref, args.deg, args.noisy)
    if args.jobs == 1:
        reports = [
            _eval_one(utt, r, d, n, specs, params.sample_rate)
            for utt, r, d, n in pairs
        ]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_eval_one, utt, r, d, n, specs, params.sample_rate)
                for utt, r, d, n in pairs
            ]
            reports = [f.result() for f in futures]

    report = EvalReport(reports, specs)
    if args.json:
        body = json.loads(report.to_json())
        body["version"] = __version__
        body["config_hash"] = digest
        body["settings"] = settings
        Path(args.json).write_text(json.dumps(body, indent=2, sort_keys=True))
        log.info("wrote %s", args.json)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        log.info("wrote %s", args.csv)
    print(report.to_table(args.system))
    n_failed = sum(1 for u in reports if u.errors)
    if n_failed:
        log.warning("%d utterance(s) had metric failures", n_failed)
    return EXIT_OK


# --- selftest -----------------------------------------------------------------


def cmd_selftest(args) -> int:
    _announce("selftest", None, {"command": "selftest", "filter": args.filter})
    results = run_suites(args.filter, weights_path=args.weights)
    if not results:
        raise UsageError(f"no selftest suite matches {args.filter!r}")
    failures = 0
    for name, verdict in results:
        if verdict:
            failures += 1
            print(f"FAIL {name}: {verdict}")
        else:
            print(f"PASS {name}")
    print(f"{len(results) - failures}/{len(results)} suites passed")
    return EXIT_VERIFY if failures else EXIT_OK


# --- init-weights ---------------------------------------------------------------


def cmd_init_weights(args) -> int:
    cfg = load_pipeline_config(args.config) if args.config else {}
    if args.model == "enhancer":
        model_cfg = _enhancer_config(cfg.get("enhancer") or {})
        manifest = enhancer_manifest(model_cfg)
    elif args.model == "vocoder":
        model_cfg = _vocoder_config(cfg.get("vocoder") or {})
        manifest = generator_manifest(model_cfg)
    else:
        model_cfg = _vocoder_config(cfg.get("vocoder") or {})
        manifest = discriminator_manifest(model_cfg)

    settings = {
        "command": "init-weights",
        "model": args.model,
        "seed": args.seed,
        "out": str(args.out),
        "config": model_cfg.to_dict(),
    }
    _announce("init-weights", args.seed, settings)

    bundle = init_weights(manifest, args.seed)
    sidecar = {
        "model": args.model,
        "seed": args.seed,
        "version": __version__,
        "config": model_cfg.to_dict(),
    }
    save_weights(args.out, bundle, config=sidecar)
    print(f"wrote {args.out} ({len(manifest)} tensors)")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lavoce", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lavoce {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="corrupt clean utterances per a manifest")
    p.add_argument("--manifest", help="mixing manifest file")
    p.add_argument("--condition", type=int, choices=(1, 2, 3),
                   help="override every entry with a preset noise condition")
    p.add_argument("--seed", type=int, help="override entry seeds (seed + line number)")
    p.add_argument("--out-dir", help="output directory (default .)")
    p.add_argument("--config", help="pipeline config JSON")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("enhance", help="predict a clean mel and optionally invert it")
    p.add_argument("--audio", required=True, help="noisy input WAV")
    p.add_argument("--video", help="mouth ROI clip (VROI file or PGM directory)")
    p.add_argument("--weights", help="enhancer weights (LVWT)")
    p.add_argument("--out", choices=("mel", "wav"), default="mel",
                   help="write the mel only, or also an inverted waveform")
    p.add_argument("--invert", choices=INVERSION_METHODS,
                   help="waveform inversion method (default griffin-lim)")
    p.add_argument("--vocoder-weights", help="vocoder weights (LVWT) for --invert vocoder")
    p.add_argument("--gl-iters", type=int, default=32,
                   help="Griffin-Lim iterations (default 32)")
    p.add_argument("--out-dir", help="output directory (default .)")
    p.add_argument("--seed", type=int, help="recorded in the run log")
    p.add_argument("--config", help="pipeline config JSON")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score enhanced audio against references")
    p.add_argument("--ref", required=True, help="clean reference WAV or directory")
    p.add_argument("--deg", required=True, help="enhanced WAV or directory")
    p.add_argument("--noisy", required=True, help="unprocessed noisy WAV or directory")
    p.add_argument("--metrics", help="comma-separated metric list")
    p.add_argument("--json", help="write a JSON report here")
    p.add_argument("--csv", help="write a CSV report here")
    p.add_argument("--jobs", type=int, default=1, help="parallel utterances")
    p.add_argument("--system", default="enhanced", help="row label for the table")
    p.add_argument("--config", help="pipeline config JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the built-in verification suites")
    p.add_argument("--filter", default="", help="run only suites whose name contains this")
    p.add_argument("--weights", help="also validate this LVWT file in the weights suite")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("init-weights", help="write seeded random weights")
    p.add_argument("--model", required=True,
                   choices=("enhancer", "vocoder", "discriminator"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output LVWT path")
    p.add_argument("--config", help="pipeline config JSON with the model section")
    p.set_defaults(func=cmd_init_weights)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LavoceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
