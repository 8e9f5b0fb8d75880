"""Command-line entry points.

Subcommands cover each pipeline stage individually (simulate, iva, sc, vm,
loss, separate, eval) plus the corpus-level ``pipeline`` runner. Global
flags: ``--config`` (flat key=value file), ``--seed``, ``--jobs``,
``--output``, ``--verbose``. The ``VMBSS_LOG`` environment variable sets the
log level when ``--verbose`` is not given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cacgmm import CacgmmState, align_permutations, cacgmm_em, sc_virtual_channels, select_classes
from .config import (
    PipelineConfig,
    apply_overrides,
    load_config,
    pipeline_config_from_mapping,
)
from .io import (
    load_demixer,
    load_masks,
    load_spectrogram,
    load_wav,
    save_demixer,
    save_masks,
    save_spectrogram,
    save_wav,
)
from .iva import DemixingSolution, auxiva_run
from .losses import vm_loss
from .metrics import pit_score
from .pipeline import run_pipeline
from .scene import render_scene
from .separator import init_estimates, separate
from .signals import Spectrogram, Waveform, istft, stft
from .vmic import AugmentedStack, backproject, build_stack

log = logging.getLogger("vmbss")


def _setup_logging(verbose: bool) -> None:
    level_name = "DEBUG" if verbose else os.environ.get("VMBSS_LOG", "WARNING")
    level = getattr(logging, level_name.upper(), logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_pipeline_config(args) -> PipelineConfig:
    mapping = load_config(args.config) if args.config else {}
    cfg = pipeline_config_from_mapping(mapping)
    overrides = {}
    if args.output is not None:
        overrides["output_dir"] = args.output
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    return apply_overrides(cfg, **overrides)


def _out_dir(args, default: str = ".") -> Path:
    path = Path(args.output) if args.output else Path(default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _mono(path: str) -> np.ndarray:
    return load_wav(path).samples[0]


def cmd_simulate(args) -> int:
    cfg = _load_pipeline_config(args)
    spec = cfg.scene
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    scene = render_scene(spec)
    out = _out_dir(args, "scene")
    save_wav(out / "mix.wav", scene.mixture)
    for c, img in enumerate(scene.images):
        for p in range(img.num_channels):
            save_wav(out / f"image_p{p}_c{c}.wav",
                     Waveform(img.samples[p:p + 1], img.sample_rate))
        save_wav(out / f"source_c{c}.wav",
                 Waveform(scene.sources.samples[c:c + 1],
                          scene.sources.sample_rate))
    meta = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
    (out / "spec.json").write_text(json.dumps(meta, indent=2,
                                              sort_keys=True) + "\n")
    print(f"wrote scene (seed {spec.seed}) to {out}")
    return 0


def cmd_iva(args) -> int:
    cfg = _load_pipeline_config(args)
    wave = load_wav(args.mixture)
    mix = stft(wave, cfg.iva.stft)
    sol = auxiva_run(mix, cfg.iva)
    out = _out_dir(args, "iva_out")
    sep = istft(sol.separated, length=wave.num_samples)
    for c in range(sep.num_channels):
        save_wav(out / f"separated_{c}.wav",
                 Waveform(sep.samples[c:c + 1], sep.sample_rate))
    save_demixer(out / "demix.bin", sol.W, sol.A, extra={
        "kept_indices": sol.kept_indices,
        "source_energies": [float(e) for e in sol.source_energies],
        "window_length": cfg.iva.stft.window_length,
        "hop_length": cfg.iva.stft.hop_length,
        "fft_size": cfg.iva.stft.fft_size,
        "sample_rate": wave.sample_rate,
    })
    print(f"wrote {sol.num_sources} separated channels and demix.bin to {out}")
    return 0


def cmd_sc(args) -> int:
    cfg = _load_pipeline_config(args)
    wave = load_wav(args.mixture)
    mix = stft(wave, cfg.sc.stft)
    state = align_permutations(cacgmm_em(mix, cfg.sc))
    out = _out_dir(args, "sc_out")
    save_masks(out / "masks.bin", state.posteriors)
    kept = list(range(cfg.sc.n_classes))
    if cfg.sc.drop_lowest_energy and cfg.sc.n_classes > 2:
        kept = select_classes(mix, state, cfg.sc.n_classes - 1)
    virtual = sc_virtual_channels(mix, state, kept)
    vwave = istft(virtual, length=wave.num_samples)
    for i, tag in enumerate(virtual.channel_tags):
        save_wav(out / f"virtual_{tag.mic}_{tag.src}.wav",
                 Waveform(vwave.samples[i:i + 1], vwave.sample_rate))
    print(f"wrote masks.bin and {virtual.num_channels} virtual channels to {out}")
    return 0


def _stack_from_files(args, cfg: PipelineConfig,
                      ) -> tuple[AugmentedStack, DemixingSolution | None]:
    """Mixture WAV (+ demixer artifacts) -> stage-domain augmented stack."""
    wave = load_wav(args.mixture)
    physical = stft(wave, cfg.stft)
    virtual = None
    sol = None
    if getattr(args, "demix", None):
        W, A, meta = load_demixer(args.demix)
        from .signals import StftConfig
        dm_stft = StftConfig(window_length=meta["window_length"],
                             hop_length=meta["hop_length"],
                             fft_size=meta["fft_size"])
        dm_mix = stft(wave, dm_stft)
        separated = np.einsum("fcp,ptf->ctf", W, dm_mix.data)
        sep = Spectrogram(data=separated, config=dm_stft,
                          sample_rate=wave.sample_rate)
        sol = DemixingSolution(
            W=W, A=A, separated=sep,
            source_energies=np.sum(np.abs(separated) ** 2, axis=(1, 2)),
            kept_indices=list(meta.get("kept_indices", range(W.shape[1]))),
        )
        vm = backproject(sol)
        vm_wave = istft(vm, length=wave.num_samples)
        virtual = Spectrogram(data=stft(vm_wave, cfg.stft).data,
                              config=cfg.stft, sample_rate=wave.sample_rate,
                              channel_tags=vm.channel_tags)
    elif getattr(args, "masks", None):
        masks = load_masks(args.masks)
        sc_mix = stft(wave, cfg.sc.stft)
        K, T, F = masks.shape
        state = CacgmmState(weights=np.full((F, K), 1.0 / K),
                            shape_mats=np.broadcast_to(
                                np.eye(sc_mix.num_channels),
                                (F, K, sc_mix.num_channels,
                                 sc_mix.num_channels)),
                            posteriors=masks)
        vm = sc_virtual_channels(sc_mix, state)
        vm_wave = istft(vm, length=wave.num_samples)
        virtual = Spectrogram(data=stft(vm_wave, cfg.stft).data,
                              config=cfg.stft, sample_rate=wave.sample_rate,
                              channel_tags=vm.channel_tags)
    return build_stack(physical, virtual), sol


def cmd_vm(args) -> int:
    cfg = _load_pipeline_config(args)
    stack, _ = _stack_from_files(args, cfg)
    out = _out_dir(args, "vm_out")
    save_spectrogram(out / "stack.bin", stack.observations)
    virt = stack.observations
    vwave = istft(virt, length=None)
    for i, tag in enumerate(virt.channel_tags):
        if tag.is_physical:
            continue
        save_wav(out / f"virtual_{tag.mic}_{tag.src}.wav",
                 Waveform(vwave.samples[i:i + 1], vwave.sample_rate))
    print(f"wrote stack.bin ({stack.num_physical} physical + "
          f"{stack.num_virtual} virtual channels) to {out}")
    return 0


def cmd_loss(args) -> int:
    cfg = _load_pipeline_config(args)
    obs = load_spectrogram(args.stack)
    num_physical = sum(1 for t in obs.channel_tags if t.is_physical)
    stack = AugmentedStack(observations=obs, num_physical=num_physical,
                           num_virtual=obs.num_channels - num_physical)
    est = load_spectrogram(args.estimates)
    report = vm_loss(stack, est.data, cfg.separator.fcp,
                     cfg.separator.loss_weights,
                     isms_enabled=cfg.separator.isms_enabled)
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.output:
        Path(args.output).mkdir(parents=True, exist_ok=True)
        (Path(args.output) / "loss_report.json").write_text(text)
    print(text, end="")
    return 0


def cmd_separate(args) -> int:
    cfg = _load_pipeline_config(args)
    stack, sol = _stack_from_files(args, cfg)
    sep_cfg = cfg.separator
    if sol is None and sep_cfg.init == "iva_estimates":
        sep_cfg = replace(sep_cfg, init="mixture_split")
    if sol is not None:
        n = load_wav(args.mixture).num_samples
        stage_sep = Spectrogram(
            data=stft(istft(sol.separated, length=n), cfg.stft).data,
            config=cfg.stft, sample_rate=sol.separated.sample_rate,
            channel_tags=sol.separated.channel_tags)
        from types import SimpleNamespace
        sol = SimpleNamespace(separated=stage_sep)
    result = separate(stack, sep_cfg, sol=sol)
    out = _out_dir(args, "separate_out")
    est = istft(result.estimates)
    for c in range(est.num_channels):
        save_wav(out / f"estimate_{c}.wav",
                 Waveform(est.samples[c:c + 1], est.sample_rate))
    lines = ["step,loss"] + [f"{i},{v:.9g}"
                             for i, v in enumerate(result.loss_history)]
    (out / "loss_history.csv").write_text("\n".join(lines) + "\n")
    (out / "report_init.json").write_text(
        json.dumps(result.initial_report.to_dict(), indent=2) + "\n")
    (out / "report_final.json").write_text(
        json.dumps(result.final_report.to_dict(), indent=2) + "\n")
    print(f"separated {est.num_channels} sources in {result.steps_taken} steps "
          f"({result.stop_reason}); loss {result.loss_history[0]:.6g} -> "
          f"{result.loss_history[-1]:.6g}")
    return 0


def cmd_eval(args) -> int:
    ests = np.stack([_mono(p) for p in args.est])
    refs = np.stack([_mono(p) for p in args.ref])
    mixture = _mono(args.mixture) if args.mixture else None
    card = pit_score(ests, refs, mixture=mixture)
    text = json.dumps(card.to_dict(), indent=2) + "\n"
    if args.output:
        Path(args.output).mkdir(parents=True, exist_ok=True)
        (Path(args.output) / "scorecard.json").write_text(text)
    if args.csv:
        csv_path = Path(args.csv)
        if not csv_path.exists():
            csv_path.write_text("scene_id,mean_si_sdr,improvement\n")
        with open(csv_path, "a") as fh:
            fh.write(f"{args.scene_id},{card.mean_si_sdr:.6f},"
                     f"{card.improvement_over_mixture:.6f}\n")
    print(text, end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_pipeline_config(args)
    outcomes, code = run_pipeline(cfg, jobs=args.jobs)
    ok = sum(1 for o in outcomes if o.status == "ok")
    print(f"{ok}/{len(outcomes)} scenes succeeded; outputs in {cfg.output_dir}")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vmbss",
        description="Blind source separation via virtual-microphone-augmented "
                    "mixture-consistency optimization")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the base random seed")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel scene workers for pipeline runs")
    parser.add_argument("--output", default=None, help="output directory")
    parser.add_argument("--verbose", action="store_true",
                        help="debug logging (otherwise honors VMBSS_LOG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scene to WAV files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("iva", help="demix a mixture WAV with AuxIVA")
    p.add_argument("mixture", help="multichannel mixture WAV")
    p.set_defaults(func=cmd_iva)

    p = sub.add_parser("sc", help="demix a mixture WAV by spatial clustering")
    p.add_argument("mixture")
    p.set_defaults(func=cmd_sc)

    p = sub.add_parser("vm", help="build the augmented observation stack")
    p.add_argument("mixture")
    p.add_argument("--demix", help="demix.bin from the iva subcommand")
    p.add_argument("--masks", help="masks.bin from the sc subcommand")
    p.set_defaults(func=cmd_vm)

    p = sub.add_parser("loss", help="evaluate the stack loss of estimates")
    p.add_argument("stack", help="stack spectrogram file (from vm)")
    p.add_argument("estimates", help="estimates spectrogram file")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("separate", help="run the direct-optimization separator")
    p.add_argument("mixture")
    p.add_argument("--demix", help="demix.bin for IVA initialization and VMs")
    p.add_argument("--masks", help="masks.bin for SC virtual channels")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("eval", help="score estimates against references")
    p.add_argument("--est", nargs="+", required=True)
    p.add_argument("--ref", nargs="+", required=True)
    p.add_argument("--mixture", default=None)
    p.add_argument("--csv", default=None, help="append a row to this CSV")
    p.add_argument("--scene-id", default="scene", dest="scene_id")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run the full multi-scene experiment")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 — CLI boundary
        log.error("%s", exc)
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
