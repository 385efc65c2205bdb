"""Command-line front end: ``colordoppler <verb> ...``.

A dataset directory holds ``manifest.json`` and one bundle per sample under
``samples/``. Velocity maps are written as ``maps/<name>.bin`` plus
``maps/<name>.json``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import (
    DatasetManifest,
    Scene,
    dataset_power_threshold,
    flip_sample,
    make_aliased_variant,
    manifest_entry,
    power_qc,
    simulate_sample,
    split_folds,
    zoom_sample,
)
from .clutter import casorati_svd_filter
from .config import load_config
from .core import (
    ConfigError,
    DataError,
    DopplerError,
    NumericError,
    atomic_write_bytes,
    canonical_json,
    read_bundle,
    write_bundle,
)
from .estimate import autocorrelator, reduce_packet
from .metrics import rmse_vs_speed, rows_to_csv, sample_metrics
from .render import read_velocity_map, write_ppm, write_velocity_map

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _echo(msg=""):
    print(msg, flush=True)


def _seed_of(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _load_manifest(data_dir: Path) -> DatasetManifest:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"{data_dir}: no manifest.json")
    return DatasetManifest.load(path)


def _name(entry) -> str:
    return Path(entry.path).name


def _speed(sample):
    scene = sample.meta.get("scene") or {}
    return (scene.get("spec") or {}).get("v_max_mps")


def _snr(value):
    return None if value is None or math.isinf(value) else value


# --- verbs --------------------------------------------------------------------------


def cmd_simulate(args):
    cfg = load_config(args.config, args.set)
    params, geometry = cfg.acquisition(), cfg.geometry()
    scenes = cfg.scenes()
    _echo(json.dumps(cfg.effective(), sort_keys=True, default=str))
    out = Path(args.out)
    snr = _snr(cfg.get("simulation", "snr_db"))
    entries = []
    for seq, scene in scenes:
        sample = simulate_sample(scene, geometry, params, snr_db=snr, seed=scene.seed, sequence_id=seq)
        rel = f"samples/{seq}_orig"
        write_bundle(sample, out / rel)
        entries.append(manifest_entry(sample, rel))
        _echo(f"{rel}: tags={sorted(sample.tags)}")
    DatasetManifest(entries).save(out / "manifest.json")
    _echo(f"wrote {len(entries)} samples to {out}")
    return 0


def cmd_augment(args):
    cfg = load_config(args.config, args.set)
    data = Path(args.data)
    manifest = _load_manifest(data)
    a = lambda k: cfg.get("augment", k)  # noqa: E731
    originals = [e for e in manifest.entries if "original" in e.tags and "flipped" not in e.tags]
    samples = {e.path: read_bundle(data / e.path) for e in originals}
    threshold = dataset_power_threshold(samples.values()) if samples else None
    entries = list(manifest.entries)
    kept = dropped = 0
    for idx, entry in enumerate(originals):
        base = samples[entry.path]
        scene = Scene.from_dict(base.meta["scene"])
        params, geometry = base.iq.params, base.iq.geometry
        snr, seq = base.meta.get("snr_db"), base.sequence_id
        new = []
        if a("flip"):
            new.append(("flip", flip_sample(base)))
        for z in range(a("zoom_count")):
            zs = zoom_sample(scene, geometry, params, a("zoom_ratio"), _seed_of(cfg.seed, idx, 1, z), snr_db=snr,
                             sequence_id=seq)
            new.append((f"zoom{z}", zs))
            if a("flip"):
                new.append((f"zoom{z}_flip", flip_sample(zs)))
        for k in range(a("alias_count")):
            al = make_aliased_variant(scene, geometry, params, (a("alias_factor_min"), a("alias_factor_max")),
                                      _seed_of(cfg.seed, idx, 2, k), snr_db=snr, sequence_id=seq)
            if "aliased" in al.tags:
                new.append((f"alias{k}", al))
        for suffix, sample in new:
            if not power_qc(sample, threshold, a("max_low_fraction")):
                dropped += 1
                continue
            rel = f"samples/{seq}_{suffix}"
            write_bundle(sample, data / rel)
            entries = [e for e in entries if e.path != rel] + [manifest_entry(sample, rel)]
            kept += 1
    result = DatasetManifest(entries)
    folds = cfg.get("train", "folds")
    if len(result.sequence_ids) >= folds:
        result = split_folds(result, folds, cfg.seed)
    else:
        _echo(f"only {len(result.sequence_ids)} sequences; folds not assigned")
    result.save(data / "manifest.json")
    _echo(f"added {kept} samples, dropped {dropped} by power QC; counts={result.counts}")
    return 0


def cmd_filter(args):
    data, out = Path(args.data), Path(args.out)
    manifest = _load_manifest(data)
    for e in manifest.entries:
        s = read_bundle(data / e.path)
        write_bundle(replace(s, iq=casorati_svd_filter(s.iq, args.discard)), out / e.path)
    manifest.save(out / "manifest.json")
    _echo(f"filtered {len(manifest.entries)} samples (discarding {args.discard} components)")
    return 0


def _estimate_sample(sample, args):
    iq = sample.iq
    if args.clutter:
        iq = casorati_svd_filter(iq, args.clutter)
    n = iq.shape[0]
    if args.start + args.packet > n:
        raise DataError(f"packet of {args.packet} frames from {args.start} exceeds the {n} available")
    iq = reduce_packet(iq, args.start, args.packet)
    return autocorrelator(iq, smooth=not args.no_smooth)


def _metric_rows(manifest, data, maps, reference=None):
    rows = []
    for e in manifest.entries:
        s = read_bundle(data / e.path)
        pred = maps[_name(e)]
        ref = reference[_name(e)].values if reference is not None else None
        if not s.mask.any():
            continue
        m = sample_metrics(pred.values, s.truth, s.mask, s.nyquist_mps, ref)
        rows.append({"name": _name(e), "sequence_id": e.sequence_id, "tags": "+".join(e.tags),
                     "v_max_mps": _speed(s), "nyquist_mps": s.nyquist_mps, **m})
    return rows


def _write_reports(out: Path, rows, reference: bool):
    cols = ["name", "sequence_id", "tags", "v_max_mps", "nyquist_mps", "pixels", "aliased_pixels", "rmse",
            "rmse_aliased"] + (["rmsd"] if reference else [])
    atomic_write_bytes(out / "metrics.csv", rows_to_csv(rows, cols))
    atomic_write_bytes(out / "rmse_vs_speed.csv", rows_to_csv(rmse_vs_speed(rows)))


def cmd_estimate(args):
    data, out = Path(args.data), Path(args.out)
    manifest = _load_manifest(data)
    maps = {}
    for e in manifest.entries:
        vmap = _estimate_sample(read_bundle(data / e.path), args)
        write_velocity_map(out / "maps" / _name(e), vmap)
        maps[_name(e)] = vmap
    rows = _metric_rows(manifest, data, maps)
    _write_reports(out, rows, False)
    _echo(f"estimated {len(maps)} maps; reports in {out}")
    return 0


def cmd_train(args):
    from .nn.train import save_checkpoint, train_kfold, training_log_csv

    cfg = load_config(args.config, args.set)
    tcfg = cfg.train_config()
    kind = args.kind or cfg.get("train", "kind")
    data, out = Path(args.data), Path(args.out)
    manifest = _load_manifest(data)
    if manifest.folds is None:
        raise DataError(f"{data}: manifest has no fold assignment (run augment first)")

    def progress(fold, row):
        if args.verbose:
            _echo(f"fold {fold} epoch {row['epoch']} train {row['train_loss']:.6g} val {row['val_loss']}")

    results = train_kfold(manifest, kind, tcfg, root=data, on_epoch=progress)
    index = {}
    for fr in results:
        save_checkpoint(fr.result.model, out / f"fold{fr.fold}", replace(tcfg, seed=tcfg.seed + fr.fold),
                        fr.result.best_epoch or len(fr.result.log))
        atomic_write_bytes(out / f"fold{fr.fold}_log.csv", training_log_csv(fr.result.log))
        index[str(fr.fold)] = fr.test_paths
        _echo(f"fold {fr.fold}: {len(fr.result.log)} epochs, final train loss {fr.result.log[-1]['train_loss']:.6g}")
    atomic_write_bytes(out / "folds.json", canonical_json({"kind": kind, "folds": tcfg.folds, "test": index}))
    return 0


def _load_models(models_dir: Path):
    from .nn.train import load_checkpoint

    index_path = models_dir / "folds.json"
    if not index_path.exists():
        raise DataError(f"{models_dir}: no folds.json")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    models, metas = [], []
    for fold in range(int(index["folds"])):
        path = models_dir / f"fold{fold}"
        if not (path / "meta.json").exists():
            raise DataError(f"{models_dir}: missing checkpoint for fold {fold}")
        m, meta = load_checkpoint(path)
        models.append(m)
        metas.append(meta)
    return models, metas


def cmd_infer(args):
    from .nn.train import ensemble_median_infer

    data, out = Path(args.data), Path(args.out)
    models, metas = _load_models(Path(args.models))
    cfg = metas[0].get("train_config") or {}
    packet, start = cfg.get("packet", 2), cfg.get("start_k", 0)
    manifest = _load_manifest(data)
    for e in manifest.entries:
        _, vmap = ensemble_median_infer(models, read_bundle(data / e.path), packet, start)
        write_velocity_map(out / "maps" / _name(e), vmap)
    _echo(f"ensemble of {len(models)} models inferred {len(manifest.entries)} maps into {out}")
    return 0


def cmd_eval(args):
    data, pred_dir, out = Path(args.data), Path(args.pred), Path(args.out)
    manifest = _load_manifest(data)
    maps = {_name(e): read_velocity_map(pred_dir / "maps" / _name(e)) for e in manifest.entries}
    reference = None
    if args.reference:
        reference = {_name(e): read_velocity_map(Path(args.reference) / "maps" / _name(e)) for e in manifest.entries}
    rows = _metric_rows(manifest, data, maps, reference)
    _write_reports(out, rows, reference is not None)
    if rows:
        _echo(f"mean RMSE {np.mean([r['rmse'] for r in rows]):.6g} m/s over {len(rows)} samples")
    return 0


def cmd_render(args):
    vmap = read_velocity_map(args.map)
    write_ppm(args.out, vmap.values, vmap.nyquist_mps)
    return 0


def cmd_gradcheck(args):
    from .nn.gradcheck import standard_checks

    worst = 0.0
    for name, err in standard_checks(args.seed).items():
        _echo(f"{name:28s} {err:.3e} {'ok' if err < args.tol else 'FAIL'}")
        worst = max(worst, err)
    if worst >= args.tol:
        raise NumericError(f"largest relative gradient error {worst:.3e} exceeds {args.tol:g}")
    return 0


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colordoppler", description="Color Doppler simulation, estimation and learning.")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required, help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a value")

    sp = sub.add_parser("simulate", help="simulate phantom bundles")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("augment", help="add zoomed, flipped and aliased variants; assign folds")
    with_config(sp, required=False)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("filter", help="SVD clutter filter every bundle")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--discard", type=int, default=1, help="singular components removed")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("estimate", help="autocorrelator velocity maps and metrics")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--packet", type=int, default=2)
    sp.add_argument("--start", type=int, default=0)
    sp.add_argument("--clutter", type=int, default=0, help="SVD components to discard first (0: no filter)")
    sp.add_argument("--no-smooth", action="store_true")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("train", help="k-fold training")
    with_config(sp, required=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=["real_unet", "complex_unet", "convnext_unet"])
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="ensemble-median inference")
    sp.add_argument("--models", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="RMSE / RMSD reports for predicted maps")
    sp.add_argument("--data", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--reference", help="directory of reference maps for RMSD")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("render", help="velocity map to PPM heatmap")
    sp.add_argument("map")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DopplerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
