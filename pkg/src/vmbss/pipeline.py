"""End-to-end experiment runs: simulate, demix, augment, separate, score.

One run renders ``num_scenes`` scenes (seeds ``base_seed + i``), pushes each
through the configured demixer and the separator, scores the results against
the reference-microphone source images, and writes per-scene artifacts plus
an aggregate CSV, a summary JSON, and a manifest that reproduces the run.
"""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .cacgmm import align_permutations, cacgmm_em, sc_virtual_channels, select_classes
from .config import PipelineConfig, pipeline_config_to_mapping
from .io import save_masks, save_wav
from .iva import auxiva_run
from .metrics import pit_score
from .scene import Scene, render_scene
from .separator import SeparationResult, init_estimates, separate
from .signals import Spectrogram, Waveform, istft, stft
from .vmic import AugmentedStack, backproject, build_stack

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scene_id", "si_sdr_init", "si_sdr_final",
               "loss_init", "loss_final", "steps")


@dataclass
class SceneOutcome:
    scene_id: str
    status: str  # "ok" or "failed"
    si_sdr_init: float = float("nan")
    si_sdr_final: float = float("nan")
    loss_init: float = float("nan")
    loss_final: float = float("nan")
    steps: int = 0
    error: str = ""

    def csv_row(self) -> str:
        if self.status != "ok":
            return f"{self.scene_id},,,,,"
        return (f"{self.scene_id},{self.si_sdr_init:.6f},{self.si_sdr_final:.6f},"
                f"{self.loss_init:.9g},{self.loss_final:.9g},{self.steps}")


def _retag(spec: Spectrogram, tags) -> Spectrogram:
    return Spectrogram(data=spec.data, config=spec.config,
                       sample_rate=spec.sample_rate, channel_tags=list(tags))


def _to_stage(wave_channels: Spectrogram, num_samples: int, stage_cfg,
              tags) -> Spectrogram:
    """Move channels from a demixer's STFT grid onto the stage grid."""
    wave = istft(wave_channels, length=num_samples)
    return _retag(stft(wave, stage_cfg), tags)


def prepare_stack(scene: Scene, cfg: PipelineConfig, out_dir: Path | None = None,
                  ) -> tuple[AugmentedStack, SimpleNamespace | None]:
    """Demix a scene and assemble the augmented stack on the stage STFT grid.

    Returns the stack and an initialization carrier whose ``separated``
    holds the demixed sources in the stage domain (None when demixing is
    disabled). Artifacts (separated WAVs, masks) land in ``out_dir`` when
    given.
    """
    n = scene.mixture.num_samples
    physical = stft(scene.mixture, cfg.stft)
    virtual = None
    shim = None

    if cfg.demixer == "iva":
        iva_in = stft(scene.mixture, cfg.iva.stft)
        sol = auxiva_run(iva_in, cfg.iva)
        vm = backproject(sol)
        virtual = _to_stage(vm, n, cfg.stft, vm.channel_tags)
        stage_sep = _to_stage(sol.separated, n, cfg.stft,
                              sol.separated.channel_tags)
        shim = SimpleNamespace(separated=stage_sep)
        if out_dir is not None:
            sep_wave = istft(sol.separated, length=n)
            for c in range(sep_wave.num_channels):
                save_wav(out_dir / f"demixed_{c}.wav",
                         Waveform(sep_wave.samples[c:c + 1],
                                  sep_wave.sample_rate))
    elif cfg.demixer == "sc":
        sc_in = stft(scene.mixture, cfg.sc.stft)
        state = align_permutations(cacgmm_em(sc_in, cfg.sc))
        if cfg.sc.drop_lowest_energy and cfg.sc.n_classes > scene.spec.num_sources:
            kept = select_classes(sc_in, state, scene.spec.num_sources)
        else:
            kept = list(range(cfg.sc.n_classes))
        vm = sc_virtual_channels(sc_in, state, kept)
        virtual = _to_stage(vm, n, cfg.stft, vm.channel_tags)
        # the reference-mic masked channels double as initial estimates
        ref_channels = [i for i, t in enumerate(vm.channel_tags) if t.mic == 0]
        ref_spec = Spectrogram(data=vm.data[ref_channels], config=vm.config,
                               sample_rate=vm.sample_rate,
                               channel_tags=[vm.channel_tags[i]
                                             for i in ref_channels])
        shim = SimpleNamespace(separated=_to_stage(ref_spec, n, cfg.stft,
                                                   ref_spec.channel_tags))
        if out_dir is not None:
            save_masks(out_dir / "masks.bin", state.posteriors)
    elif cfg.demixer != "none":
        raise ValueError(f"unknown demixer {cfg.demixer!r}")

    return build_stack(physical, virtual), shim


def run_scene(cfg: PipelineConfig, index: int, out_root: str | Path,
              write_artifacts: bool = True) -> SceneOutcome:
    """Simulate, demix, separate, and score scene ``index`` of a run."""
    scene_id = f"scene_{index:03d}"
    out_dir = Path(out_root) / scene_id if out_root is not None else None
    if out_dir is None:
        write_artifacts = False
    try:
        spec = replace(cfg.scene, seed=cfg.base_seed + index)
        scene = render_scene(spec)
        if write_artifacts:
            out_dir.mkdir(parents=True, exist_ok=True)
            save_wav(out_dir / "mixture.wav", scene.mixture)

        stack, shim = prepare_stack(scene, cfg,
                                    out_dir if write_artifacts else None)
        sep_cfg = cfg.separator
        if cfg.demixer == "none" and sep_cfg.init == "iva_estimates":
            sep_cfg = replace(sep_cfg, init="mixture_split")

        n = scene.mixture.num_samples
        refs = np.stack([img.samples[0] for img in scene.images])
        mix_ref = scene.mixture.samples[0]

        init_spec = init_estimates(stack, shim, sep_cfg,
                                   num_sources=scene.spec.num_sources)
        init_wave = istft(init_spec, length=n)
        card_init = pit_score(init_wave.samples, refs, mixture=mix_ref)

        result = separate(stack, sep_cfg, sol=shim)
        est_wave = istft(result.estimates, length=n)
        card_final = pit_score(est_wave.samples, refs, mixture=mix_ref)

        if write_artifacts:
            _write_scene_artifacts(out_dir, scene, result, est_wave,
                                   card_init, card_final)
        return SceneOutcome(
            scene_id=scene_id, status="ok",
            si_sdr_init=card_init.mean_si_sdr,
            si_sdr_final=card_final.mean_si_sdr,
            loss_init=float(result.loss_history[0]),
            loss_final=float(result.loss_history[-1]),
            steps=result.steps_taken,
        )
    except Exception as exc:  # noqa: BLE001 — isolate scene failures
        log.error("%s failed: %s", scene_id, exc)
        return SceneOutcome(scene_id=scene_id, status="failed",
                            error="".join(traceback.format_exception(exc)))


def _write_scene_artifacts(out_dir: Path, scene: Scene,
                           result: SeparationResult, est_wave: Waveform,
                           card_init, card_final) -> None:
    for c in range(est_wave.num_channels):
        save_wav(out_dir / f"estimate_{c}.wav",
                 Waveform(est_wave.samples[c:c + 1], est_wave.sample_rate))
    lines = ["step,loss"]
    lines += [f"{i},{v:.9g}" for i, v in enumerate(result.loss_history)]
    (out_dir / "loss_history.csv").write_text("\n".join(lines) + "\n")
    (out_dir / "report_init.json").write_text(
        json.dumps(result.initial_report.to_dict(), indent=2) + "\n")
    (out_dir / "report_final.json").write_text(
        json.dumps(result.final_report.to_dict(), indent=2) + "\n")
    (out_dir / "scores.json").write_text(json.dumps({
        "init": card_init.to_dict(), "final": card_final.to_dict(),
        "stop_reason": result.stop_reason,
    }, indent=2) + "\n")


def run_pipeline(cfg: PipelineConfig, jobs: int = 1,
                 write_artifacts: bool = True) -> tuple[list[SceneOutcome], int]:
    """Run all scenes and write aggregate outputs.

    Returns (outcomes, exit_code); the exit code is 1 when more than 10% of
    scenes failed, else 0. Scenes run in parallel processes when jobs > 1;
    results are always aggregated in scene order, so outputs are identical
    either way.
    """
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    indices = list(range(cfg.num_scenes))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_scene_job,
                                     [(cfg, i, str(out_root), write_artifacts)
                                      for i in indices]))
    else:
        outcomes = [run_scene(cfg, i, out_root, write_artifacts)
                    for i in indices]

    csv_lines = [",".join(CSV_COLUMNS)]
    csv_lines += [o.csv_row() for o in outcomes]
    (out_root / "results.csv").write_text("\n".join(csv_lines) + "\n")

    ok = [o for o in outcomes if o.status == "ok"]
    summary = {
        "num_scenes": cfg.num_scenes,
        "num_failed": len(outcomes) - len(ok),
        "failures": {o.scene_id: o.error for o in outcomes
                     if o.status != "ok"},
    }
    if ok:
        for name in ("si_sdr_init", "si_sdr_final", "loss_init", "loss_final"):
            values = np.array([getattr(o, name) for o in ok])
            summary[name] = {"mean": float(values.mean()),
                             "median": float(np.median(values))}
        summary["median_loss_decrease"] = float(np.median(
            [(o.loss_init - o.loss_final) / o.loss_init for o in ok
             if o.loss_init > 0]))
    (out_root / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")

    manifest = {"package_version": __version__,
                "config": pipeline_config_to_mapping(cfg)}
    (out_root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    failed_frac = (len(outcomes) - len(ok)) / max(len(outcomes), 1)
    return outcomes, 1 if failed_frac > 0.1 else 0


def _run_scene_job(args) -> SceneOutcome:
    cfg, index, out_root, write_artifacts = args
    return run_scene(cfg, index, out_root, write_artifacts)
