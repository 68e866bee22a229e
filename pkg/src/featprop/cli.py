"""Command line entry point: ``featprop {synth,project,impute,evaluate,sweep}``.

Option values are resolved as command-line flags > ``--config`` JSON file >
built-in defaults. JSON keys are the option names with dashes replaced by
underscores (``"k_items": 50``). Set ``FEATPROP_LOG`` (e.g. ``INFO``) for
progress logging on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from featprop import dataio
from featprop.errors import FeatPropError, ParameterError
from featprop.evaluation import (
    ALL_METHODS,
    DEFAULT_RATES,
    DEFAULT_SEEDS,
    Dataset,
    SweepConfig,
    knn_recommend,
    reconstruction_cosine,
    recall_at_k,
    run_sweep,
    split_interactions,
)
from featprop.features import blank_missing, sample_missing
from featprop.graph import build_item_graph, project_item_item, sparsify_topn, normalize_symmetric
from featprop.impute import Method, PropagationConfig, harmonic_residual, impute
from featprop.synthetic import generate_synthetic

log = logging.getLogger("featprop")


@dataclass
class RunConfig:
    interactions: str | None = None
    graph: str | None = None
    features: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    mask: str | None = None
    out: str | None = None
    n: int = 20
    include_diagonal: bool = False
    layers: int = 20
    tolerance: float = 1e-6
    rates: list = field(default_factory=lambda: list(DEFAULT_RATES))
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    methods: list = field(default_factory=lambda: [str(m) for m in ALL_METHODS])
    k: int = 20
    k_items: int = 50
    fallback: str = "none"
    method: str = "featprop"
    rate: float | None = None
    seed: int = 0
    low: float = 0.0
    high: float = 1.0
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_seed: int = 0
    jobs: int = 1
    # synth
    users: int = 2000
    items: int = 500
    clusters: int = 10
    per_user: int = 20
    dims: list = field(default_factory=lambda: [32, 16])
    modalities: list = field(default_factory=list)
    noise: float = 0.1

    def propagation(self) -> PropagationConfig:
        return PropagationConfig(self.layers, self.tolerance, self.n, not self.include_diagonal)


DEFAULTS = RunConfig()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: usage: {message}\n")


def _add(p, flag, **kw):
    dest = flag.lstrip("-").replace("-", "_")
    kw.setdefault("default", getattr(DEFAULTS, dest))
    p.add_argument(flag, dest=dest, **kw)


def _graph_opts(p):
    _add(p, "--n", type=int, help="neighbours kept per item in top-n sparsification")
    _add(p, "--include-diagonal", action="store_true",
         help="let an item's own co-count compete in top-n")


def _prop_opts(p):
    _graph_opts(p)
    _add(p, "--layers", type=int, help="maximum propagation layers")
    _add(p, "--tolerance", type=float, help="relative L-inf convergence threshold")
    _add(p, "--fallback", choices=["none", "mean"], help="fill for items unreachable from known ones")
    _add(p, "--low", type=float, help="lower bound of the random baseline")
    _add(p, "--high", type=float, help="upper bound of the random baseline")
    _add(p, "--jobs", type=int, help="concurrent workers")


def _eval_opts(p):
    _add(p, "--k", type=int, help="recommendation list length for Recall@k")
    _add(p, "--k-items", type=int, help="neighbours kept per item in the kNN probe")
    _add(p, "--split-ratios", type=float, nargs=3, metavar=("TRAIN", "VALID", "TEST"),
         help="per-user split ratios")
    _add(p, "--split-seed", type=int, help="seed of the train/valid/test split")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="featprop",
                     description="Impute missing multimodal item features by graph feature propagation.",
                     formatter_class=fmt, allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=fmt, allow_abbrev=False)
        p.add_argument("--config", default=None, help="JSON file with option values")
        return p

    p = command("synth", "generate a clustered synthetic dataset")
    _add(p, "--users", type=int, help="number of users")
    _add(p, "--items", type=int, help="number of items")
    _add(p, "--clusters", type=int, help="number of item/user clusters")
    _add(p, "--per-user", type=int, help="interactions per user")
    _add(p, "--dims", type=int, nargs="+", help="feature dimension per modality")
    _add(p, "--modalities", nargs="+", help="modality labels (default: visual textual for two)")
    _add(p, "--noise", type=float, help="feature noise standard deviation")
    _add(p, "--seed", type=int, default=7, help="generator seed")
    _add(p, "--out", help="output directory")

    p = command("project", "build the sparsified, normalized item-item graph")
    _add(p, "--interactions", help="user<TAB>item interaction file")
    _graph_opts(p)
    _add(p, "--out", help="output directory")

    p = command("impute", "impute missing item features")
    _add(p, "--interactions", help="interaction file (graph is built from it)")
    _add(p, "--graph", help="prebuilt graph.npz from 'project'")
    _add(p, "--features", nargs="+", help="feature files, one per modality")
    _add(p, "--mask", help="mask file (1 known / 0 missing per line)")
    _add(p, "--rate", type=float, help="sample this fraction of items as missing")
    _add(p, "--seed", type=int, help="seed for mask sampling and the random baseline")
    _add(p, "--method", choices=[str(m) for m in Method], help="imputation method")
    _prop_opts(p)
    _add(p, "--out", help="output directory")

    p = command("evaluate", "score imputed features with the kNN probe")
    _add(p, "--interactions", help="interaction file")
    _add(p, "--features", nargs="+", help="imputed feature files")
    _add(p, "--truth", nargs="+", help="ground-truth feature files for reconstruction cosine")
    _add(p, "--mask", help="mask used to produce the imputed features")
    _eval_opts(p)
    _add(p, "--out", help="write metrics JSON here instead of stdout")

    p = command("sweep", "run the method x rate x seed experiment grid")
    _add(p, "--interactions", help="interaction file")
    _add(p, "--features", nargs="+", help="complete (ground-truth) feature files")
    _add(p, "--methods", nargs="+", choices=[str(m) for m in Method], help="methods")
    _add(p, "--rates", type=float, nargs="+", help="missing rates")
    _add(p, "--seeds", type=int, nargs="+", help="mask sampling seeds")
    _prop_opts(p)
    _eval_opts(p)
    _add(p, "--out", help="output directory for report.csv / report.json")
    return parser


def _explicit_dests(subparser, argv) -> set:
    seen = set()
    for action in subparser._actions:
        for opt in action.option_strings:
            if any(a == opt or a.startswith(opt + "=") for a in argv):
                seen.add(action.dest)
    return seen


def resolve_config(args, argv, subparser) -> RunConfig:
    values = {f.name: getattr(DEFAULTS, f.name) for f in fields(RunConfig)}
    parsed = vars(args)
    # command-specific parser defaults (e.g. synth --seed 7)
    for key, val in parsed.items():
        if key in values:
            values[key] = val
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config {args.config} is not valid JSON: {exc}") from exc
        unknown = set(loaded) - set(values)
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        explicit = _explicit_dests(subparser, argv)
        for key, val in loaded.items():
            if key not in explicit:
                values[key] = val
    return RunConfig(**values)


def _require(cfg, *names):
    for name in names:
        if not getattr(cfg, name):
            raise ParameterError(f"--{name.replace('_', '-')} is required")


def _outdir(cfg) -> Path:
    _require(cfg, "out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    matrix, bundle = generate_synthetic(
        cfg.users, cfg.items, cfg.clusters, cfg.per_user, cfg.dims, cfg.noise, cfg.seed,
        cfg.modalities or None,
    )
    dataio.save_interactions(out / "interactions.tsv", matrix)
    for s in bundle:
        dataio.save_features(out / f"{s.modality}.fpmm", s)
    print(f"users={matrix.num_users} items={matrix.num_items} interactions={matrix.nnz} "
          f"modalities={','.join(bundle.modalities)}")
    return 0


def cmd_project(cfg: RunConfig) -> int:
    _require(cfg, "interactions")
    loaded = dataio.load_interactions(cfg.interactions)
    out = _outdir(cfg)
    sparse = sparsify_topn(project_item_item(loaded.matrix), cfg.n, not cfg.include_diagonal)
    graph = normalize_symmetric(sparse)
    dataio.save_graph(out / "graph.npz", graph)
    dataio.save_tokens(out / "users.txt", loaded.user_tokens)
    dataio.save_tokens(out / "items.txt", loaded.item_tokens)
    print(f"nodes={graph.num_items} edges={sparse.num_edges} "
          f"isolated={int(graph.isolated().sum())}")
    return 0


def _load_graph(cfg):
    if cfg.graph:
        return dataio.load_graph(cfg.graph)
    if cfg.interactions:
        matrix = dataio.load_interactions(cfg.interactions).matrix
        return build_item_graph(matrix, cfg.n, not cfg.include_diagonal)
    raise ParameterError("featprop needs --graph or --interactions")


def cmd_impute(cfg: RunConfig) -> int:
    _require(cfg, "features")
    bundle = dataio.load_bundle(cfg.features)
    if cfg.mask:
        mask = dataio.load_mask(cfg.mask)
    elif cfg.rate is not None:
        mask = sample_missing(bundle.num_items, cfg.rate, cfg.seed)
    else:
        raise ParameterError("give either --mask or --rate")
    mask.check(bundle.num_items)
    blanked = bundle.map(lambda s: blank_missing(s, mask))
    method = Method(cfg.method)
    graph = _load_graph(cfg) if method is Method.FEATPROP else None
    result = impute(method, blanked, mask, graph=graph, cfg=cfg.propagation(), seed=cfg.seed,
                    low=cfg.low, high=cfg.high, fallback=cfg.fallback, jobs=cfg.jobs)
    out = _outdir(cfg)
    for s in result.features:
        dataio.save_features(out / f"{s.modality}.fpmm", s)
    dataio.save_mask(out / "mask.txt", mask)
    diag = {
        "method": str(method),
        "num_items": mask.num_items,
        "num_imputed": mask.num_missing,
        "imputed_fraction": mask.num_missing / mask.num_items,
        "seed": cfg.seed,
        "layers_run": result.layers_run,
        "final_residual": result.final_residual,
        "unreachable_count": int(len(result.unreachable_items)),
    }
    if graph is not None:
        diag["harmonic_residual"] = {
            s.modality: harmonic_residual(graph, s.data, mask) for s in result.features
        }
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(diag))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _require(cfg, "interactions", "features")
    matrix = dataio.load_interactions(cfg.interactions).matrix
    bundle = dataio.load_bundle(cfg.features)
    split = split_interactions(matrix, cfg.split_ratios, cfg.split_seed)
    ranked = knn_recommend(split.train, bundle, cfg.k_items, cfg.k)
    metrics = {
        "k": cfg.k,
        "recall_at_k": recall_at_k(ranked, split.test, cfg.k),
        "split_seed": cfg.split_seed,
    }
    if cfg.truth:
        if not cfg.mask:
            raise ParameterError("--truth needs --mask")
        truth = dataio.load_bundle(cfg.truth)
        mask = dataio.load_mask(cfg.mask)
        for s in truth:
            metrics[f"cosine_{s.modality}"] = reconstruction_cosine(bundle[s.modality], s, mask)
    text = json.dumps(metrics, indent=2) + "\n"
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    _require(cfg, "interactions", "features")
    matrix = dataio.load_interactions(cfg.interactions).matrix
    bundle = dataio.load_bundle(cfg.features)
    sweep_cfg = SweepConfig(
        propagation=cfg.propagation(), k=cfg.k, k_items=cfg.k_items,
        split_ratios=tuple(cfg.split_ratios), split_seed=cfg.split_seed,
        random_low=cfg.low, random_high=cfg.high, fallback=cfg.fallback, jobs=cfg.jobs,
    )
    report = run_sweep(Dataset(matrix, bundle), cfg.methods, cfg.rates, cfg.seeds, sweep_cfg)
    csv_path, _ = dataio.write_report(report, _outdir(cfg))
    print(f"rows={len(report)} report={csv_path}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "project": cmd_project,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def _setup_logging():
    level = os.environ.get("FEATPROP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _one_line(message) -> str:
    return " ".join(str(message).split())


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    try:
        cfg = resolve_config(args, argv, subparser)
        return COMMANDS[args.command](cfg)
    except FeatPropError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"error: io: no such file: {exc.filename}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
    except (TypeError, ValueError) as exc:
        print(f"error: parameter: {_one_line(exc)}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
