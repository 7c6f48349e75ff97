"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, labelled_matrix_csv
from .aggregate import aggregate
from .blocks import ManifestWriter, load_manifest, rescale
from .embed import Signature, embedding_to_csv, residual_score
from .errors import ChainMCError, DataError, NumericalError
from .graph import build_graph, holistic_recover, recoverability, select_chain
from .inference import attach_inference
from .integrate import EmbeddingCache, fit_chain, overlay_observed, write_recovered
from .report import error_figure, normality_figure, write_png
from .sim import inference_study, load_plan, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_rank(p, mode=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rank", type=int, metavar="D", help="embedding rank (psd, asym)")
    g.add_argument("--signature", metavar="D+,D-", help="signature (indef)")
    if mode:
        p.add_argument("--mode", choices=("psd", "indef", "asym"), default="psd")


def _add_common(p):
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--threads", type=int, default=1, metavar="K")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chainmc",
                     description="Chain-linked integration of overlapping low-rank blocks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", help="spectral embedding and residual score per block")
    _add_common(p)
    _add_rank(p)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("integrate", help="recover a block along a given chain")
    _add_common(p)
    _add_rank(p)
    p.add_argument("--chain", required=True, metavar="I0,I1,...")
    p.add_argument("--ci", type=float, metavar="ALPHA")
    p.add_argument("--prefer-observed", action="store_true",
                   help="report observed values where some block has them")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("recoverable", help="connected components of the overlap graph")
    _add_common(p)
    _add_rank(p)
    p.add_argument("--threshold", type=int, metavar="R")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("chain", help="pick a chain for one entry")
    _add_common(p)
    _add_rank(p)
    p.add_argument("--entry", required=True, metavar="S,T")
    p.add_argument("--threshold", type=int, metavar="R")
    p.add_argument("--recover", action="store_true", help="also run integrate on the chain")
    p.add_argument("--ci", type=float, metavar="ALPHA")
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("holistic", help="align all blocks along a spanning tree")
    _add_common(p)
    _add_rank(p)
    p.add_argument("--threshold", type=int, metavar="R")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("aggregate", help="fuse repeated observations across blocks")
    _add_common(p)
    _add_rank(p, mode=False)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("simulate", help="Monte-Carlo experiment from a JSON config")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--seed", required=True, type=int, metavar="U64")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--threads", type=int, default=1, metavar="K")
    p.add_argument("--replicates", type=int, metavar="N", help="override the config")
    p.add_argument("--figure", metavar="PATH", help="PNG path (default: OUT with .png)")
    p.add_argument("--timing", action="store_true",
                   help="fill wall_ms (otherwise NA, keeping output reproducible)")
    return parser


def _rank(args):
    mode = getattr(args, "mode", "psd")
    if mode == "indef":
        if args.signature is None:
            raise UsageError("--mode indef needs --signature D+,D-")
        return Signature.parse(args.signature)
    if args.signature is not None:
        raise UsageError(f"--mode {mode} takes --rank, not --signature")
    if args.rank is None:
        raise UsageError(f"--mode {mode} needs --rank")
    if args.rank < 1:
        raise UsageError("--rank must be positive")
    return args.rank


def _d(rank) -> int:
    return rank.d if isinstance(rank, Signature) else int(rank)


def _ids(text: str, what: str) -> list:
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(not p for p in parts):
        raise UsageError(f"{what} must be a comma-separated list")
    return parts


def _entry(text: str):
    try:
        s, t = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--entry must look like S,T, got {text!r}") from None
    return s, t


def _by_id(blocks):
    return {b.block_id: b for b in blocks}


def _scores(blocks, mode, rank, cache):
    return {b.block_id: residual_score(cache.get(rescale(b), mode, rank)).c for b in blocks}


def _graph(args, blocks, rank, cache):
    threshold = args.threshold if args.threshold is not None else _d(rank)
    return build_graph(blocks, _scores(blocks, args.mode, rank, cache), threshold)


def _integrate(blocks, chain_ids, mode, rank, ci, prefer_observed, out, threads, cache):
    by_id = _by_id(blocks)
    missing = [c for c in chain_ids if c not in by_id]
    if missing:
        raise DataError(f"chain names unknown block(s): {', '.join(missing)}")
    chain = [by_id[c] for c in chain_ids]
    t0 = time.perf_counter()
    fit = fit_chain(chain, mode, rank, cache, threads)
    rec = attach_inference(fit, ci) if ci is not None else fit.recovered()
    if prefer_observed:
        rec = overlay_observed(rec, blocks)
    written = write_recovered(rec, out)
    overlaps = [str(m.overlap_size) for m in fit.maps]
    print(f"chain={','.join(fit.chain)} overlaps={','.join(overlaps) or '-'} "
          f"shape={rec.estimate.shape[0]}x{rec.estimate.shape[1]} "
          f"wall_ms={1e3 * (time.perf_counter() - t0):.1f} "
          f"files={','.join(str(w) for w in written)}")


def cmd_embed(args) -> int:
    rank = _rank(args)
    blocks = load_manifest(args.manifest)
    out = Path(args.out)
    lines = ["block_id,c"]
    for b in blocks:
        e = EmbeddingCache().get(rescale(b), args.mode, rank)
        atomic_write_text(out / f"{b.block_id}_embedding.csv", embedding_to_csv(e))
        c = residual_score(e).c
        lines.append(f"{b.block_id},{c!r}")
        print(f"{b.block_id}: n={e.n} d={e.d} c={c:.6g}")
    atomic_write_text(out / "scores.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_integrate(args) -> int:
    rank = _rank(args)
    if args.ci is not None and not 0.0 < args.ci < 1.0:
        raise UsageError("--ci must lie in (0, 1)")
    blocks = load_manifest(args.manifest)
    _integrate(blocks, _ids(args.chain, "--chain"), args.mode, rank, args.ci,
               args.prefer_observed, args.out, args.threads, EmbeddingCache())
    return EXIT_OK


def cmd_recoverable(args) -> int:
    if args.rank is None and args.signature is None:
        if args.threshold is None:
            raise UsageError("give --rank/--signature or --threshold")
        blocks = load_manifest(args.manifest)
        g = build_graph(blocks, {b.block_id: 0.0 for b in blocks}, args.threshold)
    else:
        rank = _rank(args)
        blocks = load_manifest(args.manifest)
        g = _graph(args, blocks, rank, EmbeddingCache())
    mask = recoverability(g)
    atomic_write_text(args.out, mask.to_csv())
    for f, members in enumerate(mask.members):
        print(f"component {f}: blocks {','.join(sorted(members, key=g.vertices.index))} "
              f"entities {len(mask.components[f])}")
    return EXIT_OK


def cmd_chain(args) -> int:
    rank = _rank(args)
    s, t = _entry(args.entry)
    if args.recover and args.out is None:
        raise UsageError("--recover needs --out")
    if args.ci is not None and not 0.0 < args.ci < 1.0:
        raise UsageError("--ci must lie in (0, 1)")
    blocks = load_manifest(args.manifest)
    cache = EmbeddingCache()
    g = _graph(args, blocks, rank, cache)
    chain = select_chain(g, s, t)
    print("chain: " + ",".join(chain))
    for v in chain:
        print(f"c[{v}]={g.scores[v]!r}")
    if args.out is not None and not args.recover:
        atomic_write_text(args.out, "block_id,c\n" + "".join(
            f"{v},{g.scores[v]!r}\n" for v in chain))
    if args.recover:
        _integrate(blocks, chain, args.mode, rank, args.ci, False, args.out, args.threads,
                   cache)
    return EXIT_OK


def cmd_holistic(args) -> int:
    rank = _rank(args)
    blocks = load_manifest(args.manifest)
    cache = EmbeddingCache()
    g = _graph(args, blocks, rank, cache)
    res = holistic_recover(g, blocks, args.mode, rank, cache)
    est = res.estimate
    atomic_write_text(args.out, labelled_matrix_csv(np.arange(est.shape[0]),
                                                    np.arange(est.shape[1]), est,
                                                    mask=np.isfinite(est)))
    print(f"roots={','.join(res.roots)} tree_edges={len(res.tree)} "
          f"covered={int(np.isfinite(est).sum())}/{est.size}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    if args.signature is not None:
        d = Signature.parse(args.signature).d
    elif args.rank is not None:
        d = args.rank
    else:
        raise UsageError("aggregate needs --rank or --signature")
    blocks = load_manifest(args.manifest)
    new_blocks, noise = aggregate(blocks, d)
    writer = ManifestWriter(Path(args.out))
    for b in new_blocks:
        writer.add(b, q=b.q)
    path = writer.write()
    atomic_write_text(Path(args.out) / "noise.csv", "block_id,sigma2_hat\n" + "".join(
        f"{n.block_id},{n.sigma2_hat!r}\n" for n in noise))
    for n in noise:
        print(f"{n.block_id}: sigma2_hat={n.sigma2_hat:.6g}")
    print(f"manifest={path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    plan = load_plan(args.config, seed=args.seed, replicates=args.replicates)
    out = Path(args.out)
    stem = out.with_suffix("")
    figure = Path(args.figure) if args.figure else stem.with_suffix(".png")
    if plan.study == "normality":
        points = plan.points()
        if len(points) != 1:
            raise DataError("the normality study does not take a sweep")
        res = inference_study(points[0], plan.entries, plan.alpha, args.threads)
        atomic_write_text(out, res.to_csv())
        atomic_write_text(Path(f"{stem}_summary.csv"), res.summary_csv())
        write_png(normality_figure(res), figure)
        for e in res.errors:
            print(e, file=sys.stderr)
        print(res.summary_csv(), end="")
        return EXIT_OK
    res = run_experiment(plan, args.threads)
    atomic_write_text(out, res.to_csv(timing=args.timing))
    atomic_write_text(Path(f"{stem}_summary.csv"), res.summary_csv())
    write_png(error_figure(res), figure)
    for r in res.failures:
        print(f"point {r['point']} replicate {r['replicate']}: {r['error']}", file=sys.stderr)
    print(res.summary_csv(), end="")
    return EXIT_OK


COMMANDS = {"embed": cmd_embed, "integrate": cmd_integrate, "recoverable": cmd_recoverable,
            "chain": cmd_chain, "holistic": cmd_holistic, "aggregate": cmd_aggregate,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be positive")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"chainmc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"chainmc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ChainMCError, OSError) as exc:
        print(f"chainmc {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
