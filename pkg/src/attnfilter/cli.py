"""Command-line front end: explain, evaluate, bench.

``explain`` renders saliency maps (NPY, optional PNG heatmaps) from exported
attention bundles. ``evaluate`` scores any directory of saliency maps against
gaze ground truth and/or a live scoring oracle, writing JSON + CSV reports
and matplotlib figures alongside. ``bench`` measures per-image wall time per
method.

Exit codes: 0 ok, 1 partial per-image failures, 2 configuration error. The
ATTNFILTER_ORACLE environment variable overrides --oracle when set.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import explain as xp
from . import npyio, perturbation, plausibility, plots, stability
from .bundle import AttentionBundle, load_bundle
from .errors import AttnFilterError, DegenerateInput
from .maps import SaliencyMap, load_gaze, load_saliency, save_saliency
from .oracle import OracleSession
from .report import MetricReport, MetricRow, write_report

log = logging.getLogger("attnfilter")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

METHODS = ("rfem", "rfem-class", "rollout", "saw", "gradcam", "random", "cbcam")
CLASS_METHODS = {"rfem-class", "saw", "gradcam"}
DEFAULT_K_SWEEP = "-0.5,0,0.5,1,1.5,2"

_MAP_NAME = re.compile(
    r"^(?P<id>.+)\.(?P<method>"
    + "|".join(sorted(METHODS, key=len, reverse=True))
    + r")(?:\.k(?P<k>[-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?))?$"
)


class ConfigError(Exception):
    pass


def _parse_k_list(text: str) -> list[float]:
    tokens = [t.strip() for t in text.replace("−", "-").split(",") if t.strip()]
    if not tokens:
        raise ConfigError(f"no K values in {text!r}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ConfigError(f"bad K list {text!r}: {exc}") from exc


def _resolve_class(spec: str | None, bundle: AttentionBundle | None = None, probs=None) -> int:
    if spec is None:
        raise ConfigError("this method needs --class <id|predicted>")
    if spec != "predicted":
        return int(spec)
    if bundle is not None:
        return bundle.predicted_class()
    if probs is not None:
        return int(np.argmax(probs))
    raise ConfigError("--class predicted needs bundle logits or an oracle")


def _image_seed(base_seed: int, image_id: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, zlib.crc32(image_id.encode())])


def compute_map(
    method: str,
    bundle: AttentionBundle,
    k: float,
    class_spec: str | None,
    seed: int,
    weight_scope: str = "matrix",
    clamp_negative: bool = False,
) -> SaliencyMap:
    if method == "rfem":
        return xp.rfem(bundle, k, weight_scope)
    if method == "rfem-class":
        cls = _resolve_class(class_spec, bundle)
        return xp.rfem_class(bundle, cls, k, clamp_negative, weight_scope)
    if method == "rollout":
        return xp.rollout_baseline(bundle)
    if method == "saw":
        return xp.saw_baseline(bundle, _resolve_class(class_spec, bundle))
    if method == "gradcam":
        return xp.gradcam_vit_baseline(bundle, _resolve_class(class_spec, bundle))
    if method == "random":
        rng_seed = _image_seed(seed, bundle.image_id)
        return SaliencyMap.from_array(
            np.random.default_rng(rng_seed)
            .random((bundle.image_height, bundle.image_width))
            .astype(np.float32)
        )
    if method == "cbcam":
        return perturbation.cb_cam_map(bundle.image_height, bundle.image_width)
    raise ConfigError(f"unknown method {method!r}")


def _discover_bundles(path: Path) -> list[Path]:
    if (path / "manifest.json").exists():
        return [path]
    return sorted(p.parent for p in path.glob("*/manifest.json"))


def _map_filename(image_id: str, method: str, k: float, multi_k: bool) -> str:
    return f"{image_id}.{method}.k{k:g}.npy" if multi_k else f"{image_id}.{method}.npy"


def parse_map_filename(stem: str) -> tuple[str, str, float | None] | None:
    """(image_id, method, k) from '<id>.<method>[.k<k>].npy' stems."""
    match = _MAP_NAME.match(stem)
    if match is None:
        return None
    k = match.group("k")
    return match.group("id"), match.group("method"), float(k) if k is not None else None


# --------------------------------------------------------------------------
# explain


def cmd_explain(args) -> int:
    bundles = _discover_bundles(Path(args.bundles))
    if not bundles:
        raise ConfigError(f"no bundles under {args.bundles}")
    if args.method in CLASS_METHODS and args.class_spec is None:
        raise ConfigError(f"method {args.method!r} needs --class <id|predicted>")
    k_values = _parse_k_list(args.k)
    multi_k = len(k_values) > 1
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_dir = Path(args.images) if args.images else None
    failures = []

    def one(bundle_dir: Path) -> None:
        bundle = load_bundle(bundle_dir)
        base_image = None
        if args.png and images_dir is not None:
            img_path = images_dir / f"{bundle.image_id}.npy"
            if img_path.exists():
                base_image = npyio.read_tensor(img_path)
        for k in k_values:
            saliency = compute_map(
                args.method,
                bundle,
                k,
                args.class_spec,
                args.seed,
                args.weight_scope,
                args.clamp_negative,
            )
            name = _map_filename(bundle.image_id, args.method, k, multi_k)
            save_saliency(out_dir / name, saliency)
            if args.png:
                plots.save_heatmap_png(saliency, out_dir / (name[: -len(".npy")] + ".png"), base_image)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(one, b): b for b in bundles}
            for future, bundle_dir in futures.items():
                try:
                    future.result()
                except Exception as exc:  # noqa: BLE001 - per-image isolation
                    failures.append((bundle_dir, exc))
    else:
        for bundle_dir in bundles:
            try:
                one(bundle_dir)
            except Exception as exc:  # noqa: BLE001
                failures.append((bundle_dir, exc))
    for bundle_dir, exc in failures:
        log.error("explain failed for %s: %s", bundle_dir, exc)
    log.info("explain: %d bundle(s), %d failure(s)", len(bundles), len(failures))
    return EXIT_PARTIAL if failures else EXIT_OK


# --------------------------------------------------------------------------
# evaluate


class _SessionPool:
    """One oracle session per worker thread, all closed together."""

    def __init__(self, spec: str, timeout: float):
        self.spec = spec
        self.timeout = timeout
        self._local = threading.local()
        self._all: list[OracleSession] = []
        self._lock = threading.Lock()

    def get(self) -> OracleSession:
        session = getattr(self._local, "session", None)
        if session is None:
            session = OracleSession.open(self.spec, timeout=self.timeout)
            self._local.session = session
            with self._lock:
                self._all.append(session)
        return session

    def close_all(self) -> None:
        with self._lock:
            for session in self._all:
                session.close()
            self._all.clear()


def _dataset_mean(image_paths: list[Path]) -> np.ndarray:
    total = None
    count = 0
    for path in image_paths:
        img = npyio.read_tensor(path).astype(np.float64)
        plane = img.reshape(img.shape[0], -1) if img.ndim == 3 else img.reshape(1, -1)
        total = plane.sum(axis=1) if total is None else total + plane.sum(axis=1)
        count += plane.shape[1]
    return (total / count).astype(np.float32)


def _parse_baseline(spec: str, image_paths: list[Path]) -> np.ndarray | float:
    if spec == "mean":
        if not image_paths:
            raise ConfigError("--baseline mean needs --images")
        return _dataset_mean(image_paths)
    values = [float(t) for t in spec.split(",") if t.strip()]
    return values[0] if len(values) == 1 else np.asarray(values, dtype=np.float32)


def _resize_map_to(saliency: SaliencyMap, height: int, width: int) -> SaliencyMap:
    if (saliency.height, saliency.width) == (height, width):
        return saliency
    from .resample import bilinear_resize

    resized = np.clip(bilinear_resize(saliency.values, height, width), 0.0, 1.0)
    return SaliencyMap(values=resized.astype(np.float32), non_degenerate=saliency.non_degenerate)


def cmd_evaluate(args) -> int:
    maps_dir = Path(args.maps)
    entries = []
    for path in sorted(maps_dir.glob("*.npy")):
        parsed = parse_map_filename(path.name[: -len(".npy")])
        if parsed is None:
            log.warning("skipping unrecognized map file %s", path.name)
            continue
        entries.append((parsed[0], parsed[1], parsed[2], path))
    if not entries:
        raise ConfigError(f"no saliency maps under {maps_dir}")

    gaze_dir = Path(args.gaze) if args.gaze else None
    images_dir = Path(args.images) if args.images else None
    oracle_spec = os.environ.get("ATTNFILTER_ORACLE") or args.oracle
    if (oracle_spec is None) != (images_dir is None):
        raise ConfigError("correctness metrics need both --oracle and --images")
    if args.stability and oracle_spec is None:
        raise ConfigError("--stability needs --oracle and --images")
    if args.steps is not None and args.step_pixels != perturbation.DEFAULT_STEP_PIXELS:
        raise ConfigError("--steps and --step-pixels are mutually exclusive")

    image_paths = {}
    if images_dir is not None:
        for image_id in {e[0] for e in entries}:
            candidate = images_dir / f"{image_id}.npy"
            if candidate.exists():
                image_paths[image_id] = candidate
    baseline = (
        _parse_baseline(args.baseline, sorted(image_paths.values())) if image_paths else 0.0
    )

    pool = _SessionPool(oracle_spec, args.timeout) if oracle_spec else None
    report = MetricReport(
        config={
            "command": "evaluate",
            "maps": str(maps_dir),
            "gaze": str(gaze_dir) if gaze_dir else None,
            "images": str(images_dir) if images_dir else None,
            "oracle": oracle_spec,
            "class": args.class_spec,
            "step_pixels": args.step_pixels,
            "steps": args.steps,
            "baseline": args.baseline,
            "support_threshold": args.support_threshold,
            "stability": bool(args.stability),
            "stability_samples": args.stability_samples,
            "epsilon": args.epsilon,
            "seed": args.seed,
        }
    )
    curve_groups: dict[str, list] = {}
    curve_lock = threading.Lock()
    incidents: list[str] = []

    def one(entry) -> MetricRow:
        image_id, method, k, path = entry
        row = MetricRow(image_id=image_id, method=method, k=k)
        saliency = load_saliency(path)

        if gaze_dir is not None:
            for metric in ("sim", "pcc", "auc_judd", "nss"):
                row.values[metric] = None
            gaze_path = next(
                (p for p in (gaze_dir / f"{image_id}.npy", gaze_dir / f"{image_id}.png") if p.exists()),
                None,
            )
            if gaze_path is None:
                log.warning("%s: no gaze ground truth, plausibility left null", image_id)
            else:
                try:
                    gaze = load_gaze(gaze_path)
                    scaled = _resize_map_to(saliency, gaze.height, gaze.width)
                    scores = plausibility.score_plausibility(scaled, gaze)
                    row.values.update(
                        sim=scores.sim, pcc=scores.pcc, auc_judd=scores.auc_judd, nss=scores.nss
                    )
                except DegenerateInput as exc:
                    log.info("%s: plausibility degenerate (%s)", image_id, exc)

        if oracle_spec is not None:
            for metric in ("iauc", "dauc", "ad", "ai", "ag", "delta_a_f"):
                row.values[metric] = None
            if image_id not in image_paths:
                log.warning("%s: no image tensor, correctness left null", image_id)
            else:
                session = pool.get()
                image = npyio.read_tensor(image_paths[image_id])
                scaled = _resize_map_to(saliency, image.shape[-2], image.shape[-1])
                step = args.step_pixels
                if args.steps is not None:
                    step = perturbation.steps_to_pixels(image.shape[-2] * image.shape[-1], args.steps)
                cls = (
                    _resolve_class(args.class_spec, probs=session.score(image))
                    if args.class_spec == "predicted"
                    else _resolve_class(args.class_spec)
                )
                del_morf = perturbation.deletion_curve(
                    image, scaled, cls, session, perturbation.MORF, baseline, step
                )
                del_lerf = perturbation.deletion_curve(
                    image, scaled, cls, session, perturbation.LERF, baseline, step
                )
                ins_morf = perturbation.insertion_curve(
                    image, scaled, cls, session, perturbation.MORF, baseline, step
                )
                row.values["dauc"] = perturbation.auc_of_curve(del_morf)
                row.values["iauc"] = perturbation.auc_of_curve(ins_morf)
                row.values["delta_a_f"] = perturbation.auc_of_curve(del_lerf) - row.values["dauc"]
                p, o = perturbation.masked_confidence_pair(
                    image, scaled, cls, session, baseline, args.support_threshold
                )
                row.values["ad"] = max(0.0, p - o) / p if p > 0 else None
                row.values["ai"] = 1.0 if o > p else 0.0
                row.values["ag"] = max(0.0, o - p) / (1.0 - p) if p < 1 else None
                group = f"{method}" + (f" k={k:g}" if k is not None else "")
                with curve_lock:
                    curve_groups.setdefault(f"{group} deletion-morf", []).append(del_morf)
                    curve_groups.setdefault(f"{group} insertion-morf", []).append(ins_morf)

                if args.stability and method in METHODS:
                    row.values["lip"] = None
                    row.values["lss"] = None
                    k_eff = k if k is not None else 1.0
                    explain_fn = lambda b: compute_map(  # noqa: E731
                        method, b, k_eff, str(cls), args.seed
                    )
                    explainer = stability.session_explainer(
                        session, explain_fn, class_id=cls if method in CLASS_METHODS else None
                    )
                    eps = args.epsilon or stability.default_epsilon(image)
                    cfg = stability.PerturbationConfig(
                        epsilon=eps, n_samples=args.stability_samples, seed=args.seed
                    )
                    row.values["lip"] = stability.lip(image, explainer, cfg)
                    row.values["lss"] = stability.lss(
                        image,
                        explainer,
                        lambda x: float(session.score(np.asarray(x, np.float32))[cls]),
                        cfg,
                    )
        return row

    try:
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as tp:
                futures = {tp.submit(one, e): e for e in entries}
                for future, entry in futures.items():
                    try:
                        report.rows.append(future.result())
                    except Exception as exc:  # noqa: BLE001
                        incidents.append(f"{entry[3].name}: {exc}")
        else:
            for entry in entries:
                try:
                    report.rows.append(one(entry))
                except Exception as exc:  # noqa: BLE001
                    incidents.append(f"{entry[3].name}: {exc}")
    finally:
        if pool is not None:
            pool.close_all()

    for incident in incidents:
        log.error("evaluate failed for %s", incident)
    out_dir = Path(args.out)
    paths = write_report(report, out_dir)
    figures_dir = out_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    plots.render_metric_summary(report, figures_dir / "metrics_summary.png")
    plots.render_k_sweep(report, figures_dir / "k_sweep.png")
    plots.render_curves(curve_groups, figures_dir / "curves.png")
    log.info("evaluate: wrote %s", paths["json"])
    return EXIT_PARTIAL if incidents else EXIT_OK


# --------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    bundle_dirs = _discover_bundles(Path(args.bundles))
    if not bundle_dirs:
        raise ConfigError(f"no bundles under {args.bundles}")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
    k = _parse_k_list(args.k)[0]
    bundles = [load_bundle(d) for d in bundle_dirs]
    rows = []
    for method in methods:
        times = []
        index = 0
        while len(times) < args.min_runs:
            bundle = bundles[index % len(bundles)]
            index += 1
            start = time.perf_counter()
            compute_map(method, bundle, k, args.class_spec, args.seed)
            times.append(time.perf_counter() - start)
        arr = np.asarray(times)
        rows.append(
            {
                "method": method,
                "runs": int(arr.size),
                "mean_s": float(arr.mean()),
                "std_s": float(arr.std()),
                "max_s": float(arr.max()),
            }
        )
    width = max(len(r["method"]) for r in rows)
    print(f"{'method'.ljust(width)}  runs  mean_s    std_s     max_s")
    for r in rows:
        print(
            f"{r['method'].ljust(width)}  {r['runs']:4d}  {r['mean_s']:.6f}  "
            f"{r['std_s']:.6f}  {r['max_s']:.6f}"
        )
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        import csv as _csv
        import json as _json

        (out_dir / "bench.json").write_text(_json.dumps(rows, indent=2, sort_keys=True) + "\n")
        with (out_dir / "bench.csv").open("w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=["method", "runs", "mean_s", "std_s", "max_s"])
            writer.writeheader()
            writer.writerows(rows)
        plots.render_bench(rows, out_dir / "bench.png")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnfilter",
        description="Filtered attention explanations for ViTs and saliency-map evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explain", help="render saliency maps from attention bundles")
    ex.add_argument("--bundles", required=True, help="bundle directory or directory of bundles")
    ex.add_argument("--method", default="rfem", choices=METHODS)
    ex.add_argument("--k", default="1.0", help=f"K value or comma list (sweep: {DEFAULT_K_SWEEP})")
    ex.add_argument("--class", dest="class_spec", default=None, help="class id or 'predicted'")
    ex.add_argument("--out", required=True)
    ex.add_argument("--png", action="store_true", help="also write PNG heatmaps")
    ex.add_argument("--images", default=None, help="image tensors for PNG overlays")
    ex.add_argument("--weight-scope", default="matrix", choices=xp.WEIGHT_SCOPES)
    ex.add_argument("--clamp-negative", action="store_true", help="clamp gradient products at 0")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--jobs", type=int, default=1)
    ex.set_defaults(func=cmd_explain)

    ev = sub.add_parser("evaluate", help="score saliency maps against gaze and/or an oracle")
    ev.add_argument("--maps", required=True, help="directory of <id>.<method>[.k<k>].npy maps")
    ev.add_argument("--gaze", default=None, help="gaze density maps (<id>.npy or <id>.png)")
    ev.add_argument("--images", default=None, help="image tensors (<id>.npy, float32 [3,H,W])")
    ev.add_argument("--oracle", default=None, help='"cmd:<argv>" or "tcp:<host>:<port>"')
    ev.add_argument("--class", dest="class_spec", default="predicted")
    ev.add_argument("--step-pixels", type=int, default=perturbation.DEFAULT_STEP_PIXELS)
    ev.add_argument("--steps", type=int, default=None, help="curve points instead of step size")
    ev.add_argument("--baseline", default="mean", help='"mean", scalar, or per-channel list')
    ev.add_argument("--support-threshold", type=float, default=0.5)
    ev.add_argument("--stability", action="store_true", help="also compute LIP/LSS (oracle-heavy)")
    ev.add_argument("--stability-samples", type=int, default=50)
    ev.add_argument("--epsilon", type=float, default=None, help="L2 radius (default 0.01*||x||)")
    ev.add_argument("--timeout", type=float, default=30.0)
    ev.add_argument("--out", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--jobs", type=int, default=1)
    ev.set_defaults(func=cmd_evaluate)

    be = sub.add_parser("bench", help="per-method wall-time over bundles")
    be.add_argument("--bundles", required=True)
    be.add_argument("--methods", default="rfem,rollout")
    be.add_argument("--k", default="1.0")
    be.add_argument("--class", dest="class_spec", default="predicted")
    be.add_argument("--min-runs", type=int, default=100)
    be.add_argument("--out", default=None)
    be.add_argument("--seed", type=int, default=0)
    be.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except AttnFilterError as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
