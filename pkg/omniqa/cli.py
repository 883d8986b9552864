"""
Command line entry point.

    omniqa synth --out data --refs 8 --seed 1
    omniqa train --manifest data/manifest.csv --stage all --checkpoint vgcn.ckpt --split-seed 0
    omniqa evaluate --checkpoint vgcn.ckpt --manifest data/manifest.csv --split-seed 0 --out report.csv

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""
from dataclasses import replace
from typing import List, Optional

import argparse
import logging
import sys
import os

from omniqa.checkpoint import load_checkpoint, save_checkpoint
from omniqa.config import RunConfig, load_config
from omniqa.dataset import OmniIQADataset, load_manifest
from omniqa.dataset_manager import SyntheticDatasetManager, SyntheticSpec, synthetic_reference
from omniqa.eval import Evaluator, split_by_reference
from omniqa.experiments import sampling_experiment, viewpoint_count_experiment
from omniqa.gcn import build_graph
from omniqa.imgproc import load_rgb, resize_rgb
from omniqa.model import VGCN, VGCNPredictor
from omniqa.nn.gradcheck import GRADCHECK_CASES, INSTANCES, run_suite
from omniqa.trainer import STAGES, TrainingLog, predict_dataset, train
from omniqa.utils.errors import DataError, NumericError, OmniQAError
from omniqa.utils.utils import ensure_dir, seed_everything
from omniqa.viewpoint import detect_viewpoints, extract_viewports, read_viewpoints_csv, write_viewpoints_csv
from omniqa.visualizer import Visualizer

logger = logging.getLogger('omniqa')

# usage errors exit with 2 from argparse itself
EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 3, 4
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, 'config', None) else RunConfig()
    seed = getattr(args, 'seed', None)
    if seed is not None:
        cfg = RunConfig(detector=cfg.detector,
                        model=replace(cfg.model, seed=seed),
                        train=replace(cfg.train, seed=seed))
    return cfg


def _split(manifest, args):
    if args.split_seed is None:
        return manifest, manifest
    return split_by_reference(manifest, args.test_refs, args.split_seed)


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(n_refs=args.refs, height=args.height, seed=args.seed,
                             include_references=args.include_references)
    except ValueError as err:
        raise DataError(str(err)) from None
    manifest_path = SyntheticDatasetManager(args.out, spec).create_dataset()
    if args.preview:
        reference = synthetic_reference(spec.height, seed_everything(spec.seed))
        Visualizer(args.out).plot_distortions(reference, seed=spec.seed)
    print(manifest_path)
    return EXIT_OK


def cmd_viewpoints(args) -> int:
    cfg = _run_config(args)
    erp = resize_rgb(load_rgb(args.image), cfg.model.erp_height, cfg.model.erp_width)
    viewpoints, heatmap = detect_viewpoints(erp, cfg.detector)
    if not viewpoints.complete:
        logger.warning("%s: %d of %d viewpoints found", args.image, len(viewpoints), viewpoints.requested)

    write_viewpoints_csv(args.out, viewpoints)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    if args.dump_heatmap:
        if heatmap is None:
            logger.warning("sampling strategy %r has no heatmap", cfg.detector.sampling)
        else:
            Visualizer(out_dir).save_heatmap(heatmap, os.path.abspath(args.dump_heatmap))
    if args.plot:
        Visualizer(out_dir).plot_viewpoints(erp, viewpoints, os.path.abspath(args.plot))
    print(f'{len(viewpoints)} viewpoints written to {args.out}')
    return EXIT_OK


def cmd_viewports(args) -> int:
    cfg = _run_config(args)
    erp = resize_rgb(load_rgb(args.image), cfg.model.erp_height, cfg.model.erp_width)
    viewpoints = read_viewpoints_csv(args.viewpoints)
    if len(viewpoints) == 0:
        raise DataError(f"{args.viewpoints}: no viewpoints")
    viewports = extract_viewports(erp, viewpoints, fov=cfg.model.fov, size=cfg.model.viewport_size)

    visualizer = Visualizer(args.out)
    visualizer.save_viewports(viewports)
    visualizer.plot_viewports(viewports)
    visualizer.dump_graph(build_graph(viewpoints, cfg.model.affinity_threshold))
    print(f'{len(viewports)} viewports written to {args.out}')
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    seed_everything(cfg.train.seed)
    train_manifest, _ = _split(load_manifest(args.manifest), args)

    if args.init:
        model = load_checkpoint(args.init)
    else:
        model = VGCN(cfg.model, cfg.detector)
    dataset = OmniIQADataset(train_manifest, model.detector_cfg, model.cfg).prepare_all()

    log = train(model, dataset, cfg.train, stage=args.stage, log=TrainingLog())
    save_checkpoint(model, args.checkpoint)
    log_path = os.path.splitext(args.checkpoint)[0] + '_log.csv'
    log.to_csv(log_path)
    logger.info("training log stored at %s", log_path)
    print(args.checkpoint)
    return EXIT_OK


def cmd_predict(args) -> int:
    predictor = VGCNPredictor(load_checkpoint(args.checkpoint))
    prediction = predictor.predict(load_rgb(args.image), name=args.image)
    print(f'q={prediction.quality:.6f} local={prediction.local:.6f} global={prediction.global_:.6f}')
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    train_manifest, test_manifest = _split(load_manifest(args.manifest), args)
    if args.subset == 'train':
        test_manifest = train_manifest
    dataset = OmniIQADataset(test_manifest, model.detector_cfg, model.cfg).prepare_all()
    q, _, _ = predict_dataset(model, dataset)

    out_dir = os.path.dirname(os.path.abspath(args.out))
    suffix = f'split{args.split_seed}_{args.subset}' if args.split_seed is not None else ''
    evaluator = Evaluator(test_manifest, out_dir, suffix_log=suffix)
    report = evaluator.evaluate(q)
    evaluator.dump_summary(args.out)
    print(report)
    print(evaluator.per_type.to_string(index=False))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.case or None, instances=args.instances, seed=args.seed)
    for result in results:
        print(f'{result.name:<16} {result.max_rel_error:.2e}  {"ok" if result.passed else "FAILED"}')
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _run_config(args)
    seed_everything(cfg.train.seed)
    train_manifest, test_manifest = split_by_reference(load_manifest(args.manifest), args.test_refs,
                                                       args.split_seed)
    if args.kind == 'sampling':
        table = sampling_experiment(train_manifest, test_manifest, cfg.detector, cfg.model, cfg.train)
    else:
        table = viewpoint_count_experiment(train_manifest, test_manifest, cfg.detector, cfg.model,
                                           cfg.train, counts=args.counts)
    if args.out:
        ensure_dir(os.path.dirname(os.path.abspath(args.out)))
        table.to_csv(args.out, index=False, float_format='%.6f')
    print(table.to_string(index=False))
    return EXIT_OK


def _counts(text: str) -> List[int]:
    try:
        counts = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError(f"counts must be positive integers, got {text!r}")
    return counts


def _add_split(parser, default_refs=2):
    parser.add_argument('--split-seed', type=int, default=None,
                        help='Hold out references with this seed (whole manifest when omitted).')
    parser.add_argument('--test-refs', type=int, default=default_refs, help='Number of held-out references.')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='omniqa', description='Blind omnidirectional image quality assessment.')
    parser.add_argument('--verbose', action='store_true', help='Debug logging.')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help='Generate a synthetic distorted database.')
    p.add_argument('--out', required=True)
    p.add_argument('--refs', type=int, default=8)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--height', type=int, default=128)
    p.add_argument('--include-references', action='store_true')
    p.add_argument('--preview', action='store_true', help='Also store a distortion grid of the first reference.')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('viewpoints', help='Detect viewpoints on an ERP.')
    p.add_argument('--image', required=True)
    p.add_argument('--config')
    p.add_argument('--dump-heatmap')
    p.add_argument('--plot', help='Store the ERP with the viewpoints marked.')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_viewpoints)

    p = sub.add_parser('viewports', help='Extract viewports at given viewpoints.')
    p.add_argument('--image', required=True)
    p.add_argument('--viewpoints', required=True)
    p.add_argument('--config')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_viewports)

    p = sub.add_parser('train', help='Train VGCN.')
    p.add_argument('--manifest', required=True)
    p.add_argument('--stage', choices=STAGES, default='all')
    p.add_argument('--config')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--init', help='Start from this checkpoint (to run stages one at a time).')
    p.add_argument('--seed', type=int, default=None)
    _add_split(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('predict', help='Score one ERP.')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--image', required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser('evaluate', help='Evaluate a checkpoint on a manifest.')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--subset', choices=('train', 'test'), default='test',
                   help='Side of the split to evaluate.')
    _add_split(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('gradcheck', help='Finite-difference gradient checks.')
    p.add_argument('--case', action='append', choices=list(GRADCHECK_CASES))
    p.add_argument('--instances', type=int, default=INSTANCES)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('experiment', help='Sampling ablations of the local branch.')
    p.add_argument('--kind', choices=('sampling', 'viewpoint-count'), required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--config')
    p.add_argument('--counts', type=_counts, default=[5, 10, 15, 20])
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--split-seed', type=int, default=0)
    p.add_argument('--test-refs', type=int, default=2)
    p.add_argument('--out')
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.func(args)
    except NumericError as err:
        logger.error("%s", err)
        return EXIT_NUMERIC
    except OmniQAError as err:
        logger.error("%s", err)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
