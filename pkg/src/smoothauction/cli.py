"""Command-line experiment driver.

Every command writes one table (CSV with a header row, or JSON with
``"schema": 1``) and exits 0 when all rows pass, 1 when any row fails and 2
on a configuration error.  Output depends only on the configuration, so
repeated runs with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import analysis, constructions, distributions, geometry, mechanisms, perturbation

COMMANDS = ("rect-lb", "square-ub", "angle-ub", "multi-item-lb", "additive-noise", "ronen", "selftest")

COLUMNS = {
    "rect-lb": "shells, points, partial_sum, value (smoothed BRev), bound (4(1+delta)), ic, ratio",
    "square-ub": "base, delta, types, lp_revenue, brev, value (ratio), bound (constant)",
    "angle-ub": "base, delta, types, lp_revenue, brev, value (ratio), bound (constant)",
    "multi-item-lb": "check (ic | revenue | brev), value, bound",
    "additive-noise": "base, check (floor | welfare | tail), value, bound",
    "ronen": "instance, second_price, lookahead, dsic_lp, value (2*lookahead), bound (dsic_lp)",
    "selftest": "check, value, bound",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    delta: float | None = None
    deltas: str | None = None
    shells: int = 2000
    checkpoints: str | None = None
    types: int = 200
    samples: int = 20000
    bases: int | None = None
    items: int = 6
    jmax: int = 20
    seed: int = 0
    solver: str = "highs"
    out: str | None = None
    format: str = "csv"

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.delta is not None and not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.solver not in ("simplex", "highs"):
            raise ConfigError("solver must be simplex or highs")
        for name in ("shells", "types", "samples", "items", "jmax"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.bases is not None and self.bases < 0:
            raise ConfigError("bases must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def delta_list(self, default) -> list[float]:
        if self.deltas:
            try:
                return [float(x) for x in self.deltas.split(",") if x.strip()]
            except ValueError as exc:
                raise ConfigError(f"bad deltas list: {self.deltas}") from exc
        return [self.delta] if self.delta is not None else list(default)


def load_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(config_fields: dict, raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in config_fields or key == "command":
            raise ConfigError(f"unknown config key {key!r}")
        kind = config_fields[key]
        try:
            if "int" in kind:
                out[key] = int(value)
            elif "float" in kind:
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


# ----------------------------------------------------------------- commands

def _random_base(rng, atoms: int = 10) -> distributions.DiscreteDistribution:
    return distributions.DiscreteDistribution.from_atoms(rng.uniform(0, 1, (atoms, 2)),
                                                         rng.dirichlet(np.ones(atoms)))


def lottery_base(types: int = 50) -> distributions.DiscreteDistribution:
    seq = constructions.shell_points(0.1, 30)
    gaps = constructions.gap_sequence(seq, perturbation.rectangle(0.1))
    return constructions.lottery_distribution(seq, gaps, truncate=types)


def cmd_rect_lb(cfg: ExperimentConfig) -> list[dict]:
    delta = cfg.delta if cfg.delta is not None else 0.1
    if not delta < 0.5:
        raise ConfigError("rect-lb needs delta < 1/2")
    if cfg.checkpoints:
        checkpoints = sorted({int(x) for x in cfg.checkpoints.split(",") if x.strip()})
    else:
        checkpoints = sorted({max(1, cfg.shells // 10), cfg.shells})
    rows = []
    prev = -math.inf
    for entry in analysis.divergence_report(delta, checkpoints):
        row = entry.row(delta)
        row["pass"] = row["pass"] and entry.partial_sum > prev
        prev = entry.partial_sum
        rows.append(row)
    return rows


def cmd_upper(cfg: ExperimentConfig, kind: str) -> list[dict]:
    make = perturbation.square if kind == "square" else perturbation.angle
    deltas = cfg.delta_list((0.1, 0.2, 0.5))
    count = 20 if cfg.bases is None else cfg.bases
    bases = [(f"random-{i}", _random_base(rng))
             for i, rng in enumerate(distributions.spawn_streams(cfg.seed, count))]
    bases.append(("lottery-50", lottery_base(50)))
    streams = distributions.spawn_streams(cfg.seed + 1, len(bases) * len(deltas))
    rows = []
    for b, (label, base) in enumerate(bases):
        for d, delta in enumerate(deltas):
            report = analysis.smoothed_ratio_experiment(base, make(delta), cfg.types,
                                                        streams[b * len(deltas) + d], cfg.solver)
            row = {"base": label, **report.row()}
            row["experiment"] = f"{kind}-ub"
            rows.append(row)
    return rows


def cmd_multi_item(cfg: ExperimentConfig) -> list[dict]:
    delta = cfg.delta if cfg.delta is not None else 0.05
    m, j_max = cfg.items, cfg.jmax
    dist, menu = constructions.subset_construction(m, j_max)
    model = perturbation.square(delta)
    cert = mechanisms.menu_ic_certificate(menu, dist, model)
    ln_c = constructions.subset_normalizer(m, j_max).ln_value
    revenue = mechanisms.menu_revenue_discrete(menu, dist)
    brev = mechanisms.brev_smoothed(distributions.SmoothedDistribution(dist, model)).revenue
    brev_bound = 4 * (1 + 2 * delta) * math.exp(-ln_c)
    base = {"experiment": "multi-item-lb", "items": m, "jmax": j_max, "delta": delta}
    return [
        {**base, "check": "ic", "value": cert.worst, "bound": -mechanisms.IC_TOL, "pass": cert.passed},
        {**base, "check": "revenue", "value": revenue.revenue, "bound": m * 2 ** m,
         "pass": revenue.revenue >= m * 2 ** m},
        {**base, "check": "brev", "value": brev, "bound": brev_bound, "pass": brev <= brev_bound},
    ]


def cmd_additive(cfg: ExperimentConfig) -> list[dict]:
    delta = cfg.delta if cfg.delta is not None else 0.05
    n = constructions.additive_default_size(delta)
    cases = [(f"scaled-n{n}", constructions.additive_scaled_distribution(n, delta))]
    count = 50 if cfg.bases is None else cfg.bases
    for i, rng in enumerate(distributions.spawn_streams(cfg.seed, count)):
        cases.append((f"random-{i}", distributions.SmoothedDistribution(_random_base(rng),
                                                                        perturbation.additive(delta))))
    rows = []
    for label, smoothed in cases:
        for row in analysis.additive_noise_check(smoothed).rows("additive"):
            rows.append({"base": label, **row})
    return rows


def correlated_instance(rng) -> distributions.JointDiscreteDistribution:
    """Two buyers, three support values each, arbitrary joint law."""
    supports = [np.sort(rng.choice(np.arange(1, 11), 3, replace=False)).astype(float) for _ in range(2)]
    profiles = np.array([[[a], [b]] for a in supports[0] for b in supports[1]])
    return distributions.JointDiscreteDistribution(profiles, rng.dirichlet(np.full(9, 0.5)))


def iid_uniform_pair() -> distributions.JointDiscreteDistribution:
    profiles = np.array([[[a], [b]] for a in (1.0, 2.0) for b in (1.0, 2.0)])
    return distributions.JointDiscreteDistribution(profiles, np.full(4, 0.25))


def cmd_ronen(cfg: ExperimentConfig) -> list[dict]:
    count = 20 if cfg.bases is None else cfg.bases
    cases = [("iid-uniform-1-2", iid_uniform_pair())]
    cases += [(f"correlated-{i}", correlated_instance(rng))
              for i, rng in enumerate(distributions.spawn_streams(cfg.seed, count))]
    rows = []
    for label, joint in cases:
        sp = mechanisms.second_price_bundle(joint).revenue
        look = mechanisms.ronen_lookahead(joint).revenue
        lp = mechanisms.dsic_optimal_lp(joint).revenue
        rows.append({"experiment": "ronen", "instance": label, "second_price": sp, "lookahead": look,
                     "dsic_lp": lp, "value": 2 * look, "bound": lp, "pass": 2 * look >= lp - 1e-9})
    return rows


def cmd_selftest(cfg: ExperimentConfig) -> list[dict]:
    rows = []

    def check(name, value, bound, ok):
        rows.append({"experiment": "selftest", "check": name, "value": float(value),
                     "bound": float(bound), "pass": bool(ok)})

    rng = np.random.default_rng(cfg.seed)
    dd = distributions.DiscreteDistribution.from_atoms
    # geometry
    for m in range(2, 9):
        angles = rng.uniform(0, geometry.HALF_PI, (2000, m - 1))
        worst = geometry.trig_vectors(angles).max(axis=1).min()
        check(f"trig-max-m{m}", worst, 1 / math.sqrt(m), worst >= 1 / math.sqrt(m) - 1e-12)
        value, err = geometry.sin_power_integral(m)
        bound = geometry.sin_power_integral_bound(m)
        check(f"sin-power-m{m}", value, bound, value <= bound + err)
    # constructions and certificates
    model = perturbation.rectangle(0.1)
    seq = constructions.shell_points(0.1, 30)
    gaps = constructions.gap_sequence(seq, model)
    menu = constructions.tailored_menu(seq, gaps)
    dist = constructions.lottery_distribution(seq, gaps)
    cert = mechanisms.menu_ic_verify(menu, seq, gaps, model)
    check("ic-shells-30", cert.worst, -mechanisms.IC_TOL, cert.passed)
    lhs, rhs = constructions.menu_revenue_identity(menu, dist, gaps)
    check("revenue-identity", lhs, rhs, abs(lhs - rhs) <= 1e-10 * rhs)
    exact = mechanisms.menu_revenue_discrete(menu, dist).revenue
    check("menu-revenue", exact, rhs, abs(exact - rhs) <= 1e-9 * rhs)
    brev = mechanisms.brev_smoothed(distributions.SmoothedDistribution(dist, model)).revenue
    check("lottery-brev", brev, 4.4, brev <= 4.4)
    _, worst_pair = constructions.same_shell_check(seq, model, 30)
    check("same-shell-gap", worst_pair, 1.0, worst_pair >= 1.0)
    # mechanisms
    ladder = mechanisms.brev_discrete(dd([[1, 0], [2, 0], [4, 0]], [.5, .25, .25]))
    check("brev-ladder", ladder.optimizer, 1.0, abs(ladder.optimizer - 1.0) <= 1e-12)
    _, lp = mechanisms.optimal_menu_lp(dd([[1, 1], [2, 2]], [.5, .5]), solver="simplex")
    check("menu-lp-two-types", lp.revenue, 2.0, abs(lp.revenue - 2.0) <= 1e-9)
    pair = iid_uniform_pair()
    sp = mechanisms.second_price_bundle(pair).revenue
    check("second-price-iid", sp, 1.25, abs(sp - 1.25) <= 1e-12)
    look = mechanisms.ronen_lookahead(pair).revenue
    check("lookahead-iid", look, 1.25, abs(look - 1.25) <= 1e-12)
    dsic = mechanisms.dsic_optimal_lp(pair).revenue
    check("dsic-lp-iid", dsic, 1.5, abs(dsic - 1.5) <= 1e-9)
    # analysis
    const = analysis.theorem_constant("angle", 1, 2, 0.1).constant
    check("angle-constant", const, math.pi / 0.2, abs(const - math.pi / 0.2) <= 1e-12)
    base = _random_base(rng)
    report = analysis.smoothed_ratio_experiment(base, perturbation.square(0.3), 60, rng, cfg.solver)
    check("square-ratio", report.ratio, report.constant, report.passed)
    smoothed = distributions.SmoothedDistribution(base, perturbation.additive(0.1))
    add = analysis.additive_noise_check(smoothed)
    check("additive-welfare", add.welfare, add.welfare_bound, add.welfare_ok)
    check("additive-tail", add.worst_tail_ratio, 1 + 1e-9, add.tail_ok)
    # Monte Carlo only resolves the first lotteries; later ones have negligible probability
    stream = distributions.spawn_streams(cfg.seed, 1)[0]
    head = constructions.tailored_menu(seq, gaps, truncate=2)
    head_dist = constructions.lottery_distribution(seq, gaps, truncate=2)
    mc = mechanisms.menu_revenue_smoothed(head, distributions.SmoothedDistribution(head_dist, model),
                                          cfg.samples, stream)
    target = float(gaps.gaps[:2].sum())
    check("menu-revenue-mc", mc.revenue, target, abs(mc.revenue - target) <= 4 * mc.stderr)
    return rows


HANDLERS = {
    "rect-lb": cmd_rect_lb,
    "square-ub": lambda cfg: cmd_upper(cfg, "square"),
    "angle-ub": lambda cfg: cmd_upper(cfg, "angle"),
    "multi-item-lb": cmd_multi_item,
    "additive-noise": cmd_additive,
    "ronen": cmd_ronen,
    "selftest": cmd_selftest,
}


# ------------------------------------------------------------------ output

def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "PASS" if value else "FAIL"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def render(cfg: ExperimentConfig, rows: list[dict]) -> str:
    params = {"seed": cfg.seed}
    rows = [{**row, **{k: v for k, v in params.items() if k not in row}} for row in rows]
    if cfg.format == "json":
        payload = {"schema": 1, "command": cfg.command,
                   "config": {k: _json_value(v) for k, v in asdict(cfg).items() if k != "out"},
                   "rows": [{k: _json_value(v) for k, v in row.items()} for row in rows]}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    header = []
    for row in rows:
        header += [k for k in row if k not in header]
    # pass goes last so the verdict is easy to scan
    if "pass" in header:
        header.remove("pass")
        header.append("pass")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row.get(k, "")) for k in header])
    return buf.getvalue()


def run(cfg: ExperimentConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg.validate()
        rows = HANDLERS[cfg.command](cfg)
    except (ConfigError, perturbation.RegionNotABox, analysis.UnsupportedBound) as exc:
        print(f"config error: {exc}", file=stderr)
        return 2
    text = render(cfg, rows)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        stdout.write(text)
    failed = [row for row in rows if not row.get("pass", True)]
    for row in failed:
        label = row.get("check") or row.get("base") or row.get("instance") or row.get("shells")
        print(f"FAIL {cfg.command} {label}: value={_cell(row.get('value'))} bound={_cell(row.get('bound'))}",
              file=stderr)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothauction", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"columns: {COLUMNS[name]}",
                           description=f"CSV columns: {COLUMNS[name]}, seed, pass")
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--delta", type=float)
        p.add_argument("--deltas", help="comma-separated deltas for the ratio batteries")
        p.add_argument("--shells", type=int)
        p.add_argument("--checkpoints", help="comma-separated shell counts for rect-lb")
        p.add_argument("--types", type=int, help="discretization size for the ratio batteries")
        p.add_argument("--samples", type=int, help="Monte Carlo samples")
        p.add_argument("--bases", type=int, help="number of random instances")
        p.add_argument("--items", type=int)
        p.add_argument("--jmax", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--solver", choices=("simplex", "highs"))
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"))
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    types = {f.name: str(f.type) for f in fields(ExperimentConfig)}
    merged = _coerce(types, load_config_file(args.config)) if args.config else {}
    for key in types:
        if key != "command" and getattr(args, key, None) is not None:
            merged[key] = getattr(args, key)
    return ExperimentConfig(command=args.command, **merged)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
