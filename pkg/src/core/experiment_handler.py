from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console

from config import config

from . import detection_stats as ds
from .attacks import AttackSpec, apply_attack
from .diffusion import (
    generate_pair,
    generate_plain,
    generate_watermarked,
    recover_spectrum,
    report_from_spectrum,
)
from .errors import PairingError, TensorFormatError
from .experiment import ExperimentConfig
from .metrics import detection_score, distortion_proxy, psnr, roc_points, summarize
from .metrpp import GlobalMessage, capacity, encode_decode_metrpp
from .reports import read_json, write_csv, write_json
from .ring_codec import Message, WatermarkKey, build_mask, encode
from .tensors import LatentTensor, read_tensor, write_tensor
from .tuning import select_scaler

console = Console()

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# Rng stream roots: one per use so runs stay independent of each other.
STREAM_GENERATION = 0
STREAM_ATTACK = 1
STREAM_TUNING = 3
STREAM_METRPP = 4


class ExperimentHandler:
    def __init__(self, experiment: ExperimentConfig, rich_console: Console = None, threads: int | None = None):
        self.config = experiment
        self.console = rich_console if rich_console else console
        self.threads = max(1, threads or config.THREADS)

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def _out(self, out_dir) -> Path:
        return Path(out_dir) if out_dir is not None else self.config.output_dir

    # Generation

    def generate(self, out_dir=None, plain: bool = False, suppress_messages: bool = False) -> Path:
        """Write noise_XXXX.metr / image_XXXX.metr per trial plus a manifest."""
        cfg = self.config
        out = self._out(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not suppress_messages:
            kind = "plain" if plain else "watermarked"
            self.console.print(f"Generating [cyan]{cfg.trials}[/cyan] {kind} images into [cyan]{out}[/cyan]")

        def work(i: int) -> dict:
            rng = cfg.rng.child(STREAM_GENERATION, i)
            msg = cfg.message_for(i)
            if plain:
                gen = generate_plain(rng, cfg.shape, cfg.predictor, cfg.schedule)
            else:
                gen = generate_watermarked(rng, cfg.key, msg, cfg.predictor, cfg.schedule, cfg.channels)
            noise, image = gen.xT_wm, gen.image
            names = {"noise": f"noise_{i:04d}.metr", "image": f"image_{i:04d}.metr"}
            write_tensor(out / names["noise"], noise)
            write_tensor(out / names["image"], image)
            return {"index": i, "seed": cfg.seed, "stream": [STREAM_GENERATION, i],
                    "message": msg.to_string(), "watermarked": not plain, **names}

        items = self._map(work, range(cfg.trials))
        manifest = {"version": MANIFEST_VERSION, "key": cfg.key.to_json(), "config": cfg.to_json(),
                    "attack": None, "items": items}
        path = write_json(out / MANIFEST_NAME, manifest)
        if not suppress_messages:
            self.console.print(f"[green]:heavy_check_mark: Wrote {len(items)} image/noise pairs and {path.name}[/green]")
        return path

    def load_manifest(self, in_dir) -> dict:
        """Read a manifest and check it against the current key and the files on disk."""
        in_dir = Path(in_dir)
        manifest = read_json(in_dir / MANIFEST_NAME, "manifest")
        if not isinstance(manifest, dict) or "items" not in manifest or "key" not in manifest:
            raise PairingError(f"{in_dir / MANIFEST_NAME} is not a generation manifest")
        try:
            key = WatermarkKey.from_json(manifest["key"])
        except (KeyError, ValueError) as e:
            raise PairingError(f"manifest key is invalid: {e}") from e
        if key != self.config.key:
            raise PairingError(f"manifest key {manifest['key']} does not match the configured key {self.config.key.to_json()}")
        for item in manifest["items"]:
            for name in ("image", "noise"):
                if name in item and not (in_dir / item[name]).is_file():
                    raise PairingError(f"manifest lists {item[name]} but it is missing from {in_dir}")
        return manifest

    def _read_image(self, path: Path) -> LatentTensor:
        tensor = read_tensor(path)
        if not isinstance(tensor, LatentTensor):
            raise TensorFormatError("expected a real image tensor, found a spectrum", 6, str(path))
        if tensor.shape != self.config.shape:
            raise PairingError(f"{path} has shape {tensor.shape}, configuration expects {self.config.shape}")
        return tensor

    # Attacks

    def attack(self, in_dir, spec: AttackSpec, out_dir=None, suppress_messages: bool = False) -> Path:
        """Apply one attack to every image listed in the manifest of ``in_dir``."""
        cfg = self.config
        in_dir = Path(in_dir)
        out = self._out(out_dir)
        manifest = self.load_manifest(in_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not suppress_messages:
            self.console.print(f"Applying [cyan]{spec.label}[/cyan] to {len(manifest['items'])} images")

        def work(item: dict) -> dict:
            image = self._read_image(in_dir / item["image"])
            rng = cfg.rng.child(STREAM_ATTACK, item["index"])
            attacked = apply_attack(image, spec, rng, predictor=cfg.predictor, schedule=cfg.schedule)
            write_tensor(out / item["image"], attacked)
            return {k: v for k, v in item.items() if k != "noise"}

        items = self._map(work, manifest["items"])
        path = write_json(out / MANIFEST_NAME, {**manifest, "attack": spec.to_json(), "items": items})
        if not suppress_messages:
            self.console.print(f"[green]:heavy_check_mark: Attacked images written to {out}[/green]")
        return path

    def attack_all(self, in_dir, out_dir=None, suppress_messages: bool = False) -> list[Path]:
        """Apply every configured attack, one output directory per attack."""
        out = self._out(out_dir)
        return [self.attack(in_dir, spec, out / spec.slug, suppress_messages=suppress_messages)
                for spec in self.config.attacks]

    # Detection

    def detect(self, in_dir, out_dir=None, blind: bool = False,
               suppress_messages: bool = False) -> tuple[pd.DataFrame, pd.DataFrame]:
        """Per-image reports under ``detections/`` and one aggregate row in ``detect.csv``."""
        cfg = self.config
        in_dir = Path(in_dir)
        out = self._out(out_dir)
        manifest = self.load_manifest(in_dir)

        def work(item: dict) -> dict:
            image = self._read_image(in_dir / item["image"])
            expected = Message.from_string(item["message"])
            report = report_from_spectrum(recover_spectrum(image, cfg.predictor, cfg.schedule), cfg.key,
                                          p0=cfg.p0, expected=None if blind else expected)
            write_json(out / "detections" / f"detect_{item['index']:04d}.json",
                       {"index": item["index"], "message": item["message"], **report.to_json()})
            return {"index": item["index"], "watermarked": item.get("watermarked", True),
                    "message": item["message"], "decoded": report.bits.to_string(),
                    "p_value": report.p_value, "present": report.present, "distance": report.distance,
                    "degenerate": report.degenerate}

        rows = pd.DataFrame(self._map(work, manifest["items"]))
        truth = [Message.from_string(m) for m in rows["message"]]
        decoded = [Message.from_string(m) for m in rows["decoded"]]
        bits = np.concatenate([np.array(t.bits) == np.array(d.bits) for t, d in zip(truth, decoded)])
        summary = pd.DataFrame([{
            "attack": (manifest.get("attack") or {}).get("kind", "none"),
            "items": len(rows),
            "presence_rate": float(rows["present"].mean()),
            "mean_p_value": float(rows["p_value"].mean()),
            "bit_acc": float(bits.mean()),
            "word_acc": float(np.mean([t == d for t, d in zip(truth, decoded)])),
            "degenerate": int(rows["degenerate"].sum()),
        }])
        write_csv(out / "detect_items.csv", rows)
        write_csv(out / "detect.csv", summary)
        if not suppress_messages:
            self.console.print(f"[green]:heavy_check_mark: Detection reports written to {out}[/green]")
        return rows, summary

    # Evaluation grid

    def _pairs(self):
        cfg = self.config

        def work(i: int):
            msg = cfg.message_for(i)
            pair = generate_pair(cfg.rng.child(STREAM_GENERATION, i), cfg.key, msg, cfg.predictor, cfg.schedule,
                                 cfg.channels)
            return msg, pair.watermarked.image, pair.plain

        return self._map(work, range(cfg.trials))

    def evaluate(self, out_dir=None, suppress_messages: bool = False) -> tuple[pd.DataFrame, dict]:
        """One CSV row per configured attack: AUC, TPR@1%FPR, bit/word accuracy, mean R_det, distortion."""
        cfg = self.config
        out = self._out(out_dir)
        key, mask = cfg.key, build_mask(cfg.key)
        if not suppress_messages:
            self.console.print(f"Generating [cyan]{cfg.trials}[/cyan] watermarked/plain pairs")
        pairs = self._pairs()
        distortions = [distortion_proxy(wm, plain) for _, wm, plain in pairs]
        psnrs = [psnr(wm, plain) for _, wm, plain in pairs]

        rows, sidecar = [], {"config": cfg.to_json(), "attacks": []}
        for a, spec in enumerate(cfg.attacks):
            if not suppress_messages:
                self.console.print(f"  attack [cyan]{spec.label}[/cyan]")

            def work(i: int, a=a, spec=spec) -> dict:
                msg, wm, plain = pairs[i]
                rng = cfg.rng.child(STREAM_ATTACK, a, i)
                wm_att = apply_attack(wm, spec, rng.child(0), predictor=cfg.predictor, schedule=cfg.schedule)
                plain_att = apply_attack(plain, spec, rng.child(1), predictor=cfg.predictor, schedule=cfg.schedule)
                y_wm = recover_spectrum(wm_att, cfg.predictor, cfg.schedule)
                y_plain = recover_spectrum(plain_att, cfg.predictor, cfg.schedule)
                rep_wm = report_from_spectrum(y_wm, key, p0=cfg.p0, expected=msg)
                rep_plain = report_from_spectrum(y_plain, key, p0=cfg.p0, expected=msg)
                r_det = ds.detection_resolution(y_plain, y_wm, encode(msg, key), mask)
                return {"index": i, "message": msg.to_string(), "decoded": rep_wm.bits.to_string(),
                        "p_wm": rep_wm.p_value, "p_plain": rep_plain.p_value, "R_det": r_det}

            trials = self._map(work, range(cfg.trials))
            summary = summarize(
                spec.label,
                [t["p_wm"] for t in trials],
                [t["p_plain"] for t in trials],
                [Message.from_string(t["message"]) for t in trials],
                [Message.from_string(t["decoded"]) for t in trials],
                [t["R_det"] for t in trials],
                distortions,
            )
            rows.append(summary.to_row())
            sidecar["attacks"].append({
                "attack": spec.to_json(),
                "summary": summary.to_json(),
                "roc": roc_points([detection_score(t["p_wm"]) for t in trials],
                                  [detection_score(t["p_plain"]) for t in trials]),
                "trials": trials,
            })
        sidecar["distortion"] = {"rms": distortions, "psnr": psnrs}
        table = pd.DataFrame(rows, columns=["attack", "auc", "tpr@1%fpr", "bit_acc", "word_acc", "mean_R_det",
                                            "distortion"])
        write_csv(out / "eval.csv", table)
        write_json(out / "eval.json", sidecar)
        if not suppress_messages:
            self.console.print(f"[green]:heavy_check_mark: Evaluation written to {out / 'eval.csv'}[/green]")
        return table, sidecar

    # Scaler search

    def tune(self, out_dir=None, suppress_messages: bool = False):
        """Pick the message scaler for the configured key size and write the search trace."""
        cfg = self.config
        out = self._out(out_dir)
        if not suppress_messages:
            self.console.print(
                f"Searching S in [cyan]{cfg.tuning.s_min:g}..{cfg.tuning.s_max:g}[/cyan] step {cfg.tuning.s_step:g}"
            )
        result = select_scaler(cfg.tuning, cfg.key, cfg.predictor, cfg.schedule, cfg.rng.child(STREAM_TUNING),
                               channels=cfg.channels, max_workers=self.threads)
        trace = pd.DataFrame([t.to_json() for t in result.trace])
        write_csv(out / "tune.csv", trace)
        write_json(out / "tune.json", result.to_json())
        if not suppress_messages:
            if result.found:
                self.console.print(f"[green]:heavy_check_mark: Selected S = {result.scaler:g}[/green]")
            else:
                self.console.print("[yellow]No scaler in range satisfies both the criterion and the budget.[/yellow]")
        return result, trace

    # METR++

    def evaluate_metrpp(self, out_dir=None, suppress_messages: bool = False) -> pd.DataFrame:
        """Per attack: METR bit/word accuracy, signature bit/word accuracy, overall word accuracy."""
        cfg = self.config
        out = self._out(out_dir)
        space = capacity(cfg.radius, cfg.groups)
        rows = []
        for a, spec in enumerate(cfg.attacks):
            if not suppress_messages:
                self.console.print(f"  METR++ under [cyan]{spec.label}[/cyan]")

            def work(i: int, a=a, spec=spec):
                rng = cfg.rng.child(STREAM_METRPP, a, i)
                msg = GlobalMessage(int(rng.child(0).integers(space)), cfg.radius, cfg.groups)
                return encode_decode_metrpp(msg, cfg.key, cfg.predictor, cfg.schedule, spec, cfg.signature,
                                            rng.child(1), channels=cfg.channels, p0=cfg.p0)

            outcomes = self._map(work, range(cfg.trials))
            n = len(outcomes)
            rows.append({
                "attack": spec.label,
                "metr_bit_acc": 1.0 - sum(o.inner_bit_errors for o in outcomes) / (n * cfg.radius),
                "metr_word_acc": sum(o.metr_ok for o in outcomes) / n,
                "sig_bit_acc": 1.0 - sum(o.sig_bit_errors for o in outcomes) / (n * cfg.signature.bits),
                "sig_word_acc": sum(o.sig_ok for o in outcomes) / n,
                "metrpp_word_acc": sum(o.ok for o in outcomes) / n,
            })
        table = pd.DataFrame(rows)
        write_csv(out / "metrpp.csv", table)
        if not suppress_messages:
            self.console.print(f"[green]:heavy_check_mark: METR++ table written to {out / 'metrpp.csv'}[/green]")
        return table

    def describe(self) -> dict:
        """Key, world and attack summary for the ``info`` command."""
        cfg = self.config
        return {
            "shape": "x".join(str(d) for d in cfg.shape),
            "steps": cfg.schedule.steps,
            "predictor": cfg.predictor.variant,
            "radius": cfg.radius,
            "scaler": cfg.scaler,
            "capacity": cfg.key.capacity,
            "mask bins": build_mask(cfg.key).count,
            "p0": cfg.p0,
            "trials": cfg.trials,
            "attacks": ", ".join(a.label for a in cfg.attacks),
            "threads": self.threads,
            "signature": f"{cfg.signature.bits} bits, {cfg.groups} groups "
                         f"({capacity(cfg.radius, cfg.groups)} messages)",
            "alpha_bar[T]": f"{cfg.schedule.alpha_bar[-1]:.6g}",
            "quality budget": f"{cfg.tuning.quality_budget:g}",
        }
