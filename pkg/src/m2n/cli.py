"""Command-line interface: gen, train, eval, infer, gradcheck.

Exit codes are a stable contract: 0 success, 1 check failure, 2 usage
error, 3 data error, 4 model/config error.
"""

from __future__ import annotations

import argparse
import sys

from .data import (
    FormatError,
    GenError,
    GenSpec,
    generate,
    read_dataset,
    read_sample,
    write_dataset,
)
from .gradcheck import model_gradcheck
from .network import (
    ConfigError,
    M2NConfig,
    ModelParams,
    QueryError,
    decode_cml,
    decode_sel,
    forward_cml,
    forward_sel,
)
from .training import (
    CheckpointError,
    TrainConfig,
    eval_cml,
    eval_sel,
    load_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def config_from_state(state: dict, n_segments: int, eps: float = 1e-5) -> M2NConfig:
    """Recover model dimensions from checkpoint tensor shapes."""
    try:
        d_v, d = state["proj_v.w"].shape
        d_a = state["proj_a.w"].shape[0]
        num_classes = state["cls.w"].shape[1]
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint lacks model tensors: {exc}") from exc
    heads = sum(
        1 for name in state if name.startswith("cmn_v.mha.head") and name.endswith(".wq")
    )
    if heads < 1:
        raise CheckpointError("checkpoint has no attention heads")
    return M2NConfig(
        n_segments=n_segments,
        d_v=int(d_v),
        d_a=int(d_a),
        d=int(d),
        heads=heads,
        num_classes=int(num_classes),
        eps=eps,
    )


def _load_model(ckpt_path: str, n_segments: int) -> tuple[ModelParams, M2NConfig]:
    state = load_checkpoint(ckpt_path)
    cfg = config_from_state(state, n_segments)
    params = ModelParams(cfg, seed=0)
    params.load_state(state)
    return params, cfg


def _check_dataset_consistent(dataset) -> None:
    first = dataset[0]
    for i, s in enumerate(dataset):
        same = (
            s.visual.shape == first.visual.shape
            and s.audio.shape == first.audio.shape
            and s.num_classes == first.num_classes
        )
        if not same:
            raise FormatError(f"sample {i} dimensions disagree with sample 0")


def cmd_gen(args) -> int:
    spec = GenSpec(
        seed=args.seed,
        num_samples=args.samples,
        n_segments=args.n,
        d_v=args.dv,
        d_a=args.da,
        num_classes=args.classes,
        noise_std=args.noise,
        signal_gain=args.gain,
    )
    samples = generate(spec)
    try:
        names = write_dataset(samples, args.out)
    except OSError as exc:
        _err(f"cannot write to {args.out}: {exc}")
        return EXIT_USAGE
    print(f"wrote {len(names)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    _check_dataset_consistent(dataset)
    first = dataset[0]
    model_cfg = M2NConfig(
        n_segments=first.n_segments,
        d_v=first.visual.shape[1],
        d_a=first.audio.shape[1],
        d=args.d,
        heads=args.heads,
        num_classes=first.num_classes,
    )
    if not 0 <= args.val_ratio < 1:
        raise GenError(f"val ratio must be in [0, 1), got {args.val_ratio}")
    cfg = TrainConfig(
        task=args.task,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        ratios=(1.0 - args.val_ratio, args.val_ratio, 0.0),
        ckpt_path=args.ckpt,
        log_path=args.log if args.log else args.ckpt + ".loss.log",
    )
    result = train(dataset, model_cfg, cfg, quiet=False)
    print(f"best_val_accuracy={result.best_val:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = read_dataset(args.data)
    _check_dataset_consistent(dataset)
    params, cfg = _load_model(args.ckpt, dataset[0].n_segments)
    if args.task == "sel":
        print(f"accuracy={eval_sel(params, cfg, dataset):.4f}")
        return EXIT_OK
    if args.direction:
        acc = eval_cml(params, cfg, dataset, args.direction)
        print(f"{args.direction}_accuracy={acc:.4f}")
        return EXIT_OK
    a2v = eval_cml(params, cfg, dataset, "a2v")
    v2a = eval_cml(params, cfg, dataset, "v2a")
    print(f"a2v_accuracy={a2v:.4f}")
    print(f"v2a_accuracy={v2a:.4f}")
    print(f"average_accuracy={0.5 * (a2v + v2a):.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    sample = read_sample(args.input)
    params, cfg = _load_model(args.ckpt, sample.n_segments)
    if args.task == "sel":
        out = forward_sel(sample, params, cfg)
        for t, label in enumerate(decode_sel(out)):
            print(f"{t},{int(label)}")
        return EXIT_OK

    n = sample.n_segments
    if args.qstart is None or args.qlen is None:
        qstart, qlen = sample.event_span()
        qstart = args.qstart if args.qstart is not None else qstart
        qlen = args.qlen if args.qlen is not None else qlen
    else:
        qstart, qlen = args.qstart, args.qlen
    if qstart < 0 or qlen < 1 or qstart + qlen > n:
        _err(f"query span [{qstart}, {qstart + qlen}) invalid for {n} segments")
        return EXIT_USAGE
    span = slice(qstart, qstart + qlen)
    query = sample.audio[span] if args.direction == "a2v" else sample.visual[span]
    context = sample.visual if args.direction == "a2v" else sample.audio
    p_r = forward_cml(query, context, args.direction, params, cfg)
    start = decode_cml(p_r, qlen)
    print(f"start={start},len={qlen}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = model_gradcheck(
        n_segments=args.n,
        d=args.d,
        heads=args.heads,
        num_classes=args.classes,
        d_v=args.dv,
        d_a=args.da,
        seed=args.seed,
        step=args.step,
    )
    failures = []
    for r in reports:
        status = "ok" if r.max_rel_err <= args.tol else "FAIL"
        print(f"{r.name} max_rel_err={r.max_rel_err:.3e} {status}")
        if r.max_rel_err > args.tol:
            failures.append(r.name)
    if failures:
        print(f"gradcheck FAIL ({len(failures)} parameters): {', '.join(failures)}")
        return EXIT_CHECK
    print(f"gradcheck PASS ({len(reports)} parameters, tol={args.tol})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="m2n",
        description="Audio-visual event localization: synthesize data, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--n", type=int, default=10, help="segments per sample")
    p.add_argument("--dv", type=int, default=32, help="visual feature width")
    p.add_argument("--da", type=int, default=16, help="audio feature width")
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--gain", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--task", required=True, choices=("sel", "cml"))
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--ckpt", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--d", type=int, default=64, help="model width")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--val-ratio", type=float, default=0.2)
    p.add_argument("--log", default=None, help="loss log path (default: CKPT.loss.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--task", required=True, choices=("sel", "cml"))
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--direction", choices=("a2v", "v2a"), default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run one sample through a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="one .m2nf file")
    p.add_argument("--task", choices=("sel", "cml"), default="sel")
    p.add_argument("--direction", choices=("a2v", "v2a"), default="a2v")
    p.add_argument("--qstart", type=int, default=None)
    p.add_argument("--qlen", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dv", type=int, default=6)
    p.add_argument("--da", type=int, default=5)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (GenError, QueryError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        _err(str(exc))
        return EXIT_DATA
    except (CheckpointError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
