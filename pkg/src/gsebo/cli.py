"""Command-line entry point: ``gsebo <subcommand> [flags]``."""
import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .autodiff.rng import RngStream
from .bilevel import TrainConfig, check_hypergradient, train_gsebo, train_vanilla
from .dataio import export_z_report, load_bundle, load_model, save_bundle, save_model
from .exceptions import BundleFormatError, ContractError, DivergenceError
from .graph import generate_sbm, inject_inter_class_edges, inter_class_ratio
from .metrics import aggregate_runs, evaluate, z_strength_summary
from .models import BACKBONES, BackboneConfig

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3
NOISE_GRID = (0, 1000, 3000, 5000, 10000, 20000)
TAU_GRID = (5, 10, 15, 20, 25)


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _add_model_flags(p):
    g = p.add_argument_group("backbone")
    g.add_argument("--backbone", choices=BACKBONES, default="gcn")
    g.add_argument("--layers", type=int, default=2, help="propagation depth (default: 2)")
    g.add_argument("--hidden", type=int, default=16, help="hidden width (default: 16, as published)")
    g.add_argument("--heads", type=int, default=1, help="GAT heads (default: 1)")
    g.add_argument("--dropout", type=float, default=0.5, help="dropout rate (default: 0.5, as published)")


def _add_train_flags(p, tau_default=15, eta_inner_default=0.01):
    g = p.add_argument_group("optimization")
    g.add_argument("--tau", type=int, default=tau_default, help=f"inner steps per outer iteration (default: {tau_default})")
    g.add_argument("--eta-inner", type=float, default=eta_inner_default, help=f"inner learning rate (default: {eta_inner_default})")
    g.add_argument("--eta-outer", type=float, default=0.01, help="outer learning rate on Z (default: 0.01, as published)")
    g.add_argument("--lambda", dest="lam", type=float, default=5e-4, help="weight decay (default: 5e-4, as published)")
    g.add_argument("--patience", type=int, default=20, help="early-stopping patience in outer iterations (default: 20, as published)")
    g.add_argument("--max-outer", type=int, default=400, help="outer iteration cap (default: 400)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-direct-term", action="store_true", help="drop dF/dZ at W_tau from the hypergradient")
    g.add_argument("--reg-z", action="store_true", help="add lambda*||Z||^2 to the validation objective")
    g.add_argument("--reduction", choices=("sum", "mean"), default="sum", help="how per-node losses combine (default: sum)")


def _configs(args, seed=None, tau=None):
    backbone = BackboneConfig(args.backbone, args.layers, args.hidden, args.heads, args.dropout)
    train = TrainConfig(
        eta_inner=args.eta_inner,
        eta_outer=args.eta_outer,
        tau=args.tau if tau is None else tau,
        lam=args.lam,
        patience=args.patience,
        max_outer=args.max_outer,
        seed=args.seed if seed is None else seed,
        include_direct_term=not args.no_direct_term,
        reg_z=args.reg_z,
        reduction=args.reduction,
    )
    return backbone, train


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as "diverged"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="gsebo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write history, report and snapshot")
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--out", help="output directory (default: print report only)")
    p.add_argument("--vanilla", action="store_true", help="freeze the structure (baseline)")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("gradcheck", help="compare reverse hypergradients with finite differences")
    p.add_argument("--backbones", default="gcn,sage,jknet")
    p.add_argument("--n", type=int, default=14, help="nodes in the generated SBM (default: 14)")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--heads", type=int, default=1)
    _add_train_flags(p, tau_default=3, eta_inner_default=0.1)

    p = sub.add_parser("robustness", help="accuracy under injected inter-class edges")
    p.add_argument("--data", required=True)
    p.add_argument("--levels", type=_int_list, help="comma-separated edge counts (overrides --scale)")
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on the default 0,1k,3k,5k,10k,20k grid")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", help="TSV path (default: stdout)")
    p.add_argument("--check-trend", action="store_true", help="exit 3 if the margin does not grow with noise")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("tau-sweep", help="accuracy as a function of the unroll length")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=_int_list, default=list(TAU_GRID))
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", help="TSV path (default: stdout)")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("gen-synth", help="write a stochastic block model bundle")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--p-intra", type=float, default=0.05)
    p.add_argument("--p-inter", type=float, default=0.0044)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--feature-noise", type=float, default=1.0)
    p.add_argument("--inject", type=int, default=0, help="extra inter-class edges to add")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bundle directory to create")

    p = sub.add_parser("export-z", help="dump learned strengths per stored edge")
    p.add_argument("--model", required=True, help="snapshot written by 'train'")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="TSV path")
    return parser


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    bundle = load_bundle(args.data)
    backbone, cfg = _configs(args)
    train = train_vanilla if args.vanilla else train_gsebo
    state, history = train(bundle, backbone, cfg)
    report = evaluate(state, bundle, vanilla=args.vanilla).to_tsv()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.tsv").write_text(history.to_tsv())
        (out / "report.tsv").write_text(report)
        save_model(state, out / "model.npz")
    sys.stdout.write(report)
    return EXIT_OK


def cmd_gradcheck(args):
    worst = 0.0
    for name in [b for b in args.backbones.split(",") if b]:
        bundle = generate_sbm(args.n, 2, 0.5, 0.1, feature_dim=4, feature_noise=0.5, rng=RngStream(args.seed))
        backbone = BackboneConfig(name, args.layers, args.hidden, args.heads, 0.0)
        _, cfg = _configs(argparse.Namespace(**{**vars(args), "backbone": name, "dropout": 0.0}))
        result = check_hypergradient(bundle, backbone, cfg, epsilon=args.epsilon)
        worst = max(worst, result.max_rel_error)
        status = "ok" if result.passed(args.tol) else "FAIL"
        print(
            f"{name}\ttau={cfg.tau}\tmax_rel_error={result.max_rel_error:.3e}\t"
            f"checked={result.checked}\tskipped={result.skipped}\t{status}"
        )
    print(f"max relative error: {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_VERIFY


def _run_job(job):
    method, bundle, backbone, cfg = job
    train = train_gsebo if method == "gsebo" else train_vanilla
    _, history = train(bundle, backbone, cfg)
    return history.final_test_accuracy


def _run_all(jobs):
    """Run ``{key: job}`` and return ``{key: test accuracy}``, merged by sorted key."""
    workers = max(1, int(os.environ.get("GSEBO_THREADS", "1")))
    keys = sorted(jobs)
    if workers == 1 or len(keys) == 1:
        values = [_run_job(jobs[k]) for k in keys]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(keys))) as pool:
            values = list(pool.map(_run_job, [jobs[k] for k in keys]))
    return dict(zip(keys, values))


def cmd_robustness(args):
    bundle = load_bundle(args.data)
    levels = args.levels if args.levels else [int(round(k * args.scale)) for k in NOISE_GRID]
    noise_rng = RngStream(args.seed).spawn(0xC0FFEE)
    jobs = {}
    for level in levels:
        graph = inject_inter_class_edges(bundle.graph, bundle.labels, level, noise_rng.spawn(level))
        noisy = bundle.with_graph(graph)
        for run in range(args.runs):
            backbone, cfg = _configs(args, seed=args.seed + run)
            for method in ("gsebo", "vanilla"):
                jobs[(level, method, run)] = (method, noisy, backbone, cfg)
    results = _run_all(jobs)

    lines = ["level\tmethod\tmean_test_acc\tstd_test_acc\truns"]
    margins = {}
    for level in levels:
        means = {}
        for method in ("gsebo", "vanilla"):
            accs = [results[(level, method, r)] for r in range(args.runs)]
            mean, std = aggregate_runs(accs)
            means[method] = mean
            lines.append(f"{level}\t{method}\t{mean:.6f}\t{std:.6f}\t{args.runs}")
        margins[level] = means["gsebo"] - means["vanilla"]
    _emit("\n".join(lines) + "\n", args.out)

    lo, hi = min(levels), max(levels)
    trend = margins[hi] >= margins[lo]
    print(
        f"margin at {lo}: {margins[lo]:+.4f}; at {hi}: {margins[hi]:+.4f}; "
        f"trend {'observed' if trend else 'not observed'}",
        file=sys.stderr,
    )
    if args.check_trend and not trend:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_tau_sweep(args):
    bundle = load_bundle(args.data)
    jobs = {}
    for tau in args.grid:
        for run in range(args.runs):
            backbone, cfg = _configs(args, seed=args.seed + run, tau=tau)
            jobs[(tau, run)] = ("gsebo", bundle, backbone, cfg)
    results = _run_all(jobs)
    lines = ["tau\tmean_test_acc\tstd_test_acc\truns"]
    for tau in args.grid:
        mean, std = aggregate_runs([results[(tau, r)] for r in range(args.runs)])
        lines.append(f"{tau}\t{mean:.6f}\t{std:.6f}\t{args.runs}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_gen_synth(args):
    rng = RngStream(args.seed)
    bundle = generate_sbm(
        args.n,
        args.classes,
        args.p_intra,
        args.p_inter,
        feature_dim=args.feature_dim,
        feature_noise=args.feature_noise,
        rng=rng,
        name=f"sbm-n{args.n}-c{args.classes}-s{args.seed}",
    )
    if args.inject:
        graph = inject_inter_class_edges(bundle.graph, bundle.labels, args.inject, rng.spawn(1))
        bundle = bundle.with_graph(graph)
    save_bundle(bundle, args.out)
    s = bundle.split
    print(
        f"nodes={bundle.n}\tedges={bundle.graph.num_edges}\t"
        f"inter_ratio={inter_class_ratio(bundle.graph, bundle.labels):.4f}\t"
        f"train={s.train.size}\tval={s.val.size}\ttest={s.test.size}"
    )
    return EXIT_OK


def cmd_export_z(args):
    bundle = load_bundle(args.data)
    state = load_model(args.model)
    export_z_report(state, bundle, args.out)
    intra, inter = z_strength_summary(state, bundle)
    fmt = lambda v: "NA" if v is None else f"{v:.6f}"  # noqa: E731
    print(f"mean_strength_intra\t{fmt(intra)}")
    print(f"mean_strength_inter\t{fmt(inter)}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "robustness": cmd_robustness,
    "tau-sweep": cmd_tau_sweep,
    "gen-synth": cmd_gen_synth,
    "export-z": cmd_export_z,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BundleFormatError, ContractError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
