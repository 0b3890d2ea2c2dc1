"""Command-line interface.

Exit codes: 0 success, 1 usage or IO error, 2 the verifier found a
violation, 3 a search ran out of budget or the input is infeasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from narrowcap.config import get_tol
from narrowcap.errors import (
    ConeSearchFailed,
    NarrowcapError,
    NoSector,
    NoSeparation,
    SearchBudgetExceeded,
    UnboundedLipschitz,
)
from narrowcap.geometry import LabeledDataset, PointCloud, find_sector_certificate

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("narrowcap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _read_cloud(path) -> PointCloud:
    text = Path(path).read_text()
    return PointCloud.from_json(text) if str(path).endswith(".json") else PointCloud.from_csv(text)


def _read_dataset(path) -> LabeledDataset:
    return LabeledDataset.from_csv(Path(path).read_text())


def _read_net(path):
    from narrowcap.network import deserialize
    return deserialize(Path(path).read_bytes())


def _write_net(net, path):
    from narrowcap.network import serialize
    Path(path).write_bytes(serialize(net))


def _max_error(net, X, y) -> float:
    return float(np.abs(net.forward(X)[:, 0] - np.asarray(y, dtype=float)).max())


def _fmt_uuac(err: float) -> str:
    """Errors at or below the global tolerance are reported as an exact 0."""
    return f"0 (raw {err:.3g})" if err <= get_tol() else f"{err:.3g}"


# -- subcommands ---------------------------------------------------------------

def cmd_collapse(args):
    from narrowcap.constructors import collapse_to_point
    K, M = _read_cloud(args.k), _read_cloud(args.m)
    res = collapse_to_point(K, M, args.eps)
    _write_net(res.network, args.out)
    print("collapsed point:", " ".join(repr(float(c)) for c in res.collapsed_point))
    print(f"epsilon used: {res.epsilon!r}")
    return EXIT_OK


def cmd_fit_two_class(args):
    from narrowcap.constructors import two_class_exact_fit
    K1, K2 = _read_cloud(args.k1), _read_cloud(args.k2)
    cert = find_sector_certificate(K1, K2, seed=args.seed, budget=args.budget)
    net = two_class_exact_fit(K1, K2, cert, args.a1, args.a2)
    _write_net(net, args.out)
    X = np.vstack([K1.points, K2.points])
    y = np.concatenate([np.full(len(K1), args.a1), np.full(len(K2), args.a2)])
    print(f"UUAC {_fmt_uuac(_max_error(net, X, y))}")
    return EXIT_OK


def cmd_fit_multi(args):
    from narrowcap.constructors import multi_class_exact_fit
    comps = []
    for item in args.component:
        path, sep, value = item.rpartition(":")
        if not sep:
            raise UsageError(f"component {item!r} must look like FILE:VALUE")
        comps.append((_read_cloud(path), float(value)))
    net = multi_class_exact_fit(comps, seed=args.seed)
    _write_net(net, args.out)
    X = np.vstack([c.points for c, _ in comps])
    y = np.concatenate([np.full(len(c), v) for c, v in comps])
    print(f"UUAC {_fmt_uuac(_max_error(net, X, y))}")
    return EXIT_OK


def cmd_fit_finite(args):
    from narrowcap.constructors import finite_exact_fit
    data = _read_dataset(args.data)
    net = finite_exact_fit(data.points, data.labels, seed=args.seed)
    _write_net(net, args.out)
    print(f"UUAC {_fmt_uuac(_max_error(net, data.points, data.labels))}  width {net.width}")
    return EXIT_OK


def cmd_fit_cos(args):
    from narrowcap.cosine import CosineFitProblem, cosine_fit
    if args.data:
        data = _read_dataset(args.data)
        points, targets = data.points, data.labels
    elif args.points and args.targets:
        points = _read_cloud(args.points).points
        targets = _read_cloud(args.targets).points.reshape(-1)
    else:
        raise UsageError("fit-cos needs --data, or --points together with --targets")
    res = cosine_fit(CosineFitProblem(points, targets, args.eps),
                     seed=args.seed, budget=args.budget)
    _write_net(res.network, args.out)
    print(f"alpha {res.alpha!r}  W2 {res.W2!r}  max error {res.achieved_error:.3g}")
    return EXIT_OK


def cmd_verify_max(args):
    from narrowcap.verifier import BoxRegion, max_principle_check
    net = _read_net(args.net)
    region = BoxRegion.parse(args.box)
    rep = max_principle_check(net, region, args.step, exact=args.exact)
    status = EXIT_OK
    for name, r in (("maximum", rep), ("minimum", rep.minimum)):
        if r is None:
            continue
        sign = -1.0 if name == "minimum" else 1.0
        print(f"{name}: interior {sign * r.interior_max:.6g}  boundary {sign * r.boundary_max:.6g}"
              f"  tolerance {r.tolerance:.3g}  {'VIOLATED' if r.violated else 'ok'}")
        if r.violated:
            print("  witness:", " ".join(repr(float(c)) for c in r.witness))
            status = EXIT_VIOLATION
    return status


def cmd_experiment(args):
    from narrowcap.experiment import (
        BallDatasetConfig,
        TrainConfig,
        generate_ball_dataset,
        layer_snapshots,
        snapshots_to_dict,
        train,
    )
    from narrowcap.network import serialize

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_ball_dataset(BallDatasetConfig.preset(args.balls, seed=args.seed))
    config = TrainConfig(seed=args.seed, epochs=args.epochs)
    hist = train(config, data)
    (out / "dataset.csv").write_text(data.to_csv())
    (out / "history.csv").write_text(hist.to_csv())
    (out / "network.json").write_bytes(serialize(hist.final))
    meta = {
        "balls": args.balls, "seed": args.seed, "epochs": config.epochs,
        "batch_size": config.batch_size, "learning_rate": config.learning_rate,
        "adam_beta1": config.adam_beta1, "adam_beta2": config.adam_beta2,
        "adam_eps": config.adam_eps, "hidden_widths": list(config.hidden_widths),
    }
    doc = {"metadata": meta, "snapshots": snapshots_to_dict(layer_snapshots(hist.final, data))}
    (out / "snapshots.json").write_text(json.dumps(doc))
    _, mse, uuac = hist.per_epoch[-1] if hist.per_epoch else (0, hist.initial_mse, hist.initial_uuac)
    print(f"MSE {mse:.5g}  UUAC {uuac:.5g}")
    return EXIT_OK


def cmd_render(args):
    from narrowcap.render import RenderSpec, fitted_view_box, render_svg
    data = _read_dataset(args.data)
    clouds = [(data.cloud(c), c) for c in data.classes()]
    box = tuple(float(v) for v in args.view_box.split(",")) if args.view_box \
        else fitted_view_box([data.points])
    spec = RenderSpec(view_box=box, width=args.size, height=args.size,
                      resolution=args.resolution, title=args.title or "")
    net = _read_net(args.net) if args.net else None
    Path(args.out).write_bytes(render_svg(clouds, spec, net))
    return EXIT_OK


def cmd_snapshots(args):
    from narrowcap.experiment import layer_snapshots, snapshots_to_dict
    from narrowcap.render import render_snapshot_panels
    net, data = _read_net(args.net), _read_dataset(args.data)
    snaps = layer_snapshots(net, data)
    Path(args.out).write_text(json.dumps(snapshots_to_dict(snaps)))
    if args.svg:
        Path(args.svg).write_bytes(render_snapshot_panels(snaps))
    print(f"{len(snaps)} stages")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="narrowcap", description="Narrow network synthesis and verification.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("collapse", help="collapse a cloud K to one point, fixing M")
    s.add_argument("--k", required=True)
    s.add_argument("--m", required=True)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_collapse)

    s = sub.add_parser("fit-two-class", help="exact fit of two sector-separated clouds")
    s.add_argument("--k1", required=True)
    s.add_argument("--k2", required=True)
    s.add_argument("--a1", type=float, default=1.0)
    s.add_argument("--a2", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int, default=200)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_two_class)

    s = sub.add_parser("fit-multi", help="exact fit of several separable clouds")
    s.add_argument("--component", action="append", required=True, metavar="FILE:VALUE")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_multi)

    s = sub.add_parser("fit-finite", help="width-2 exact fit of a finite labelled set")
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_finite)

    s = sub.add_parser("fit-cos", help="width-1 cosine network fit")
    s.add_argument("--data", help="CSV with columns x1..xd,label")
    s.add_argument("--points", help="CSV of points (use with --targets)")
    s.add_argument("--targets", help="CSV with one target per line")
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=float, default=1e7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_cos)

    s = sub.add_parser("verify-max", help="grid check of the maximum principle on a box")
    s.add_argument("--net", required=True)
    s.add_argument("--box", required=True, help="'lo1,lo2:hi1,hi2'")
    s.add_argument("--step", type=float, default=0.01)
    s.add_argument("--exact", action="store_true", help="report exact grid maxima")
    s.set_defaults(func=cmd_verify_max)

    s = sub.add_parser("experiment", help="train on the ball dataset")
    s.add_argument("--balls", type=int, choices=(6, 8), default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("render", help="SVG scatter plot with optional decision regions")
    s.add_argument("--data", required=True)
    s.add_argument("--net")
    s.add_argument("--out", required=True)
    s.add_argument("--view-box", help="xmin,ymin,xmax,ymax")
    s.add_argument("--size", type=int, default=400)
    s.add_argument("--resolution", type=int, default=80)
    s.add_argument("--title")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("snapshots", help="per-layer transformed data")
    s.add_argument("--net", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--svg")
    s.set_defaults(func=cmd_snapshots)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NoSeparation, NoSector, ConeSearchFailed, SearchBudgetExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, UnboundedLipschitz, NarrowcapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
