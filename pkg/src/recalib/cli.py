"""Command-line front end: simulate, reference, optimize, evaluate, report.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .core import EvalDistribution, InteractionLog, LogFormatError, snapshot_at
from .evaluator import DEFAULT_SAMPLES, evaluate_exact, evaluate_sampled, hit_matrix
from .recommenders import ALGORITHMS, DEFAULT_K, make_recommender
from .reweighter import ReferenceMarginal, optimize_weights, reference_marginal
from .simulator import ScenarioConfig, generate

log = logging.getLogger("recalib")

REPORT_HEADER = (
    "day", "algorithm", "p", "mode", "score", "score_classical",
    "divergence_initial", "divergence_final", "n_pairs", "std_error", "seed", "weights_file",
)
SERIES_HEADER = ("day", "p", "score")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_days(spec: str) -> list[int]:
    """``A..B[:step]`` (inclusive), a single day, or a comma list."""
    try:
        if ".." in spec:
            rng, _, step = spec.partition(":")
            a, b = (int(x) for x in rng.split(".."))
            step_n = int(step) if step else 1
            if step_n < 1 or b < a:
                raise ValueError
            return list(range(a, b + 1, step_n))
        return [int(x) for x in spec.split(",")]
    except ValueError:
        raise UsageError(f"bad day range {spec!r}, expected A..B[:step]") from None


def parse_ints(spec: str, what: str) -> list[int]:
    try:
        vals = [int(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad {what} list {spec!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise UsageError(f"{what} values must be non-negative integers: {spec!r}")
    return vals


def parse_algorithms(spec: str) -> list[str]:
    algs = [a.strip() for a in spec.split(",") if a.strip()]
    bad = [a for a in algs if a not in ALGORITHMS]
    if bad or not algs:
        raise UsageError(f"unknown algorithm(s) {bad or spec!r}; choose from {', '.join(ALGORITHMS)}")
    return algs


def parse_params(items: list[str]) -> dict[str, dict[str, str]]:
    """``algorithm.key=value`` pairs grouped by algorithm."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        name, sep, value = item.partition("=")
        alg, dot, key = name.partition(".")
        if not sep or not dot or alg not in ALGORITHMS:
            raise UsageError(f"bad --param {item!r}, expected algorithm.key=value")
        out.setdefault(alg, {})[key] = value
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunManifest:
    log_path: str
    evaluation_days: list[int]
    algorithms: list[str]
    p_values: list[int] = field(default_factory=lambda: [0])
    reference_day: int | None = None
    seed: int = 0
    k: int = DEFAULT_K
    sampled: int | None = None
    config_path: str | None = None

    def __post_init__(self):
        if not self.evaluation_days:
            raise UsageError("no evaluation days")
        if self.reference_day is None:
            self.reference_day = min(self.evaluation_days)
        if self.reference_day > min(self.evaluation_days):
            raise UsageError(
                f"reference day {self.reference_day} is after the first evaluation day {min(self.evaluation_days)}"
            )
        if self.k < 1:
            raise UsageError("--k must be >= 1")
        if self.sampled is not None and self.sampled < 1:
            raise UsageError("--sampled must be >= 1")


def _load_log(path) -> InteractionLog:
    if path is None:
        raise UsageError("--log is required")
    try:
        return InteractionLog.read_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read log {path}: {exc.strerror}") from None
    except LogFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def _snapshot(ilog, day, what):
    snap = snapshot_at(ilog, day)
    if snap.empty:
        raise DataError(f"{what} day {day} has no interactions")
    return snap


def cmd_simulate(args) -> int:
    try:
        cfg = ScenarioConfig.read(args.config) if args.config else ScenarioConfig()
    except OSError as exc:
        raise DataError(f"cannot read config {args.config}: {exc.strerror}") from None
    except ValueError as exc:
        raise DataError(f"bad config: {exc}") from None
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.log is None:
        raise UsageError("--log is required (output path)")
    ilog = generate(cfg)
    ilog.write_csv(args.log)
    users, items, _ = ilog.arrays()
    print(
        f"users={len(set(users.tolist()))} items={len(set(items.tolist()))} "
        f"events={len(ilog)} days={ilog.first_day}..{ilog.last_day} seed={cfg.seed}"
    )
    return 0


def cmd_reference(args) -> int:
    ilog = _load_log(args.log)
    if args.ref_day is None:
        raise UsageError("--ref-day is required")
    ref = reference_marginal(_snapshot(ilog, args.ref_day, "reference"))
    ref.write_csv(args.out)
    print(f"reference day={ref.day} items={len(ref.probs)} -> {args.out}")
    return 0


def cmd_optimize(args) -> int:
    ilog = _load_log(args.log)
    if args.day is None:
        raise UsageError("--day is required")
    p = parse_ints(args.p, "--p")
    if len(p) != 1 or p[0] < 1:
        raise UsageError("optimize takes a single --p >= 1")
    if args.reference:
        try:
            ref = ReferenceMarginal.read_csv(args.reference)
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"bad reference file {args.reference}: {exc}") from None
    elif args.ref_day is not None:
        ref = reference_marginal(_snapshot(ilog, args.ref_day, "reference"))
    else:
        raise UsageError("give --ref-day or --reference")
    snap = _snapshot(ilog, args.day, "target")
    sol = optimize_weights(snap, EvalDistribution(), ref, p[0])
    sol.write_csv(args.out)
    print(
        f"day={args.day} p={sol.p} D {sol.divergence_initial:.6g} -> {sol.divergence_final:.6g} "
        f"iterations={sol.iterations} converged={sol.converged} -> {args.out}"
    )
    return 0


def _manifest_from(args) -> RunManifest:
    kv = read_kv(args.manifest) if args.manifest else {}

    def pick(flag, key):
        v = getattr(args, flag)
        return v if v is not None else kv.get(key)

    try:
        days = pick("days", "days")
        algs = pick("algorithm", "algorithms")
        ref_day = pick("ref_day", "reference_day")
        sampled = pick("sampled", "sampled")
        seed = pick("seed", "seed")
        k = pick("k", "k")
        return RunManifest(
            log_path=pick("log", "log"),
            evaluation_days=parse_days(str(days)) if days is not None else [],
            algorithms=parse_algorithms(str(algs)) if algs is not None else ["cosine_cf", "naive_cf"],
            p_values=parse_ints(str(pick("p", "p") or "0"), "--p"),
            reference_day=int(ref_day) if ref_day is not None else None,
            seed=int(seed) if seed is not None else 0,
            k=int(k) if k is not None else DEFAULT_K,
            sampled=int(sampled) if sampled is not None else None,
            config_path=kv.get("config"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def run_evaluation(m: RunManifest, ilog: InteractionLog, params=None, weights_dir: Path | None = None,
                   report_dir: Path | None = None) -> list[tuple]:
    """Report rows for every (day, algorithm, p) cell, in canonical order."""
    params = params or {}
    ref_snap = _snapshot(ilog, m.reference_day, "reference")
    ref = reference_marginal(ref_snap)
    try:
        recs = {a: make_recommender(a, reference=ref_snap, **params.get(a, {})) for a in m.algorithms}
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad recommender parameters: {exc}") from None
    base = EvalDistribution()
    rows = []
    for day in sorted(set(m.evaluation_days)):
        snap = _snapshot(ilog, day, "evaluation")
        hits = {a: hit_matrix(g, snap, m.k) for a, g in recs.items()}
        solutions = {}
        for p in sorted(set(m.p_values)):
            if p == 0:
                continue
            sol = optimize_weights(snap, base, ref, p)
            wfile = ""
            if weights_dir is not None:
                weights_dir.mkdir(parents=True, exist_ok=True)
                path = weights_dir / f"weights_day{day}_p{p}.csv"
                sol.write_csv(path)
                wfile = os.path.relpath(path, report_dir) if report_dir is not None else str(path)
            solutions[p] = (sol, wfile)
        for a in sorted(m.algorithms):
            g = recs[a]
            classical = _evaluate(g, snap, base, m, hits[a])
            for p in sorted(set(m.p_values)):
                if p == 0:
                    res, d0, d1, wfile = classical, "", "", ""
                else:
                    sol, wfile = solutions[p]
                    res = _evaluate(g, snap, base.with_weights(sol.weights), m, hits[a])
                    d0, d1 = repr(sol.divergence_initial), repr(sol.divergence_final)
                rows.append((
                    day, a, p, res.mode, repr(res.score), repr(classical.score), d0, d1, res.n_pairs,
                    "" if res.std_error is None else repr(res.std_error),
                    "" if res.seed is None else res.seed, wfile,
                ))
        log.info("day %d done", day)
    return rows


def _evaluate(g, snap, dist, m, hits):
    if m.sampled:
        return evaluate_sampled(g, snap, dist, m.k, m.sampled, m.seed, hits=hits)
    return evaluate_exact(g, snap, dist, m.k, hits=hits)


def cmd_evaluate(args) -> int:
    m = _manifest_from(args)
    ilog = _load_log(m.log_path)
    out = Path(args.out)
    weights_dir = Path(args.weights_dir) if args.weights_dir else out.with_name(out.stem + "_weights")
    rows = run_evaluation(m, ilog, parse_params(args.param), weights_dir, out.parent)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(rows)
    print(f"{len(rows)} rows -> {out}")
    return 0


def read_report(path) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                return []
            missing = [c for c in ("day", "algorithm", "p", "score") if c not in reader.fieldnames]
            if missing:
                raise DataError(f"{path}: report lacks columns {missing}")
            return list(reader)
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc.strerror}") from None


def report_series(rows: list[dict[str, str]], algorithms=()) -> dict[str, list[tuple[str, str, str]]]:
    """Regroup report rows into per-algorithm ``(day, p, score)`` series."""
    series: dict[str, list] = {a: [] for a in algorithms}
    for r in rows:
        series.setdefault(r["algorithm"], []).append((r["day"], r["p"], r["score"]))
    return series


def cmd_report(args) -> int:
    rows = read_report(args.report)
    algs = parse_algorithms(args.algorithm) if args.algorithm else ([] if rows else list(ALGORITHMS))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for alg, series in sorted(report_series(rows, algs).items()):
        path = out_dir / f"series_{alg}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES_HEADER)
            w.writerows(series)
        print(f"{alg}: {len(series)} points -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recalib", description="Bias-corrected offline evaluation of recommenders.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def shared(p, *flags):
        if "log" in flags:
            p.add_argument("--log", help="interaction log CSV (user_id,item_id,day)")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="random seed")
        if "k" in flags:
            p.add_argument("--k", type=int, help=f"recommendation list size (default {DEFAULT_K})")
        if "p" in flags:
            p.add_argument("--p", help="number(s) of reweighted items, comma separated; 0 = no reweighting")
        if "ref_day" in flags:
            p.add_argument("--ref-day", type=int, help="reference day")
        if "days" in flags:
            p.add_argument("--days", help="evaluation days A..B[:step]")
        if "algorithm" in flags:
            p.add_argument("--algorithm", help=f"comma list of {{{','.join(ALGORITHMS)}}}")
        if "sampled" in flags:
            p.add_argument("--sampled", type=int, nargs="?", const=DEFAULT_SAMPLES,
                           help=f"sampled evaluation with N pairs (default {DEFAULT_SAMPLES})")

    p = sub.add_parser("simulate", help="generate a synthetic interaction log")
    p.add_argument("--config", help="scenario key-value file (default scenario if omitted)")
    shared(p, "log", "seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reference", help="record the item marginal of a reference day")
    shared(p, "log", "ref_day")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("optimize", help="fit reweighting weights for one day")
    shared(p, "log", "ref_day", "p")
    p.add_argument("--day", type=int, help="day whose marginal is reweighted")
    p.add_argument("--reference", help="reference marginal CSV instead of --ref-day")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize, p="1")

    p = sub.add_parser("evaluate", help="classical and reweighted scores over days")
    shared(p, "log", "seed", "k", "p", "ref_day", "days", "algorithm", "sampled")
    p.add_argument("--manifest", help="key-value run manifest; flags override it")
    p.add_argument("--param", action="append", default=[], help="algorithm.key=value recommender option")
    p.add_argument("--weights-dir", help="where weight files go (default <out>_weights/)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="split a report into per-algorithm score series")
    p.add_argument("--report", required=True)
    p.add_argument("--algorithm", help="algorithms to emit (also when the report is empty)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"recalib: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"recalib: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
