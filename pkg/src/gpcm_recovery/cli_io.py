"""File formats, run configuration and the ``gpcm-recovery`` command line.

Every command writes its outputs plus ``manifest.json`` under ``--out``. The
manifest embeds the full resolved configuration, so
``gpcm-recovery <command> --config <out>/manifest.json --out <dir>`` replays a
run byte for byte.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 estimation nonconvergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GpcmError, InvalidInputError, NonConvergenceError, ParseError
from .model import ItemBank, ItemParams, ResponseMatrix

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 2, 3, 4
METHODS = ("mmle", "mcmc", "both")


def _fmt(x) -> str:
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


# -- response and item files ----------------------------------------------------------

def read_response_table(path, n_categories=None) -> tuple[list[str], ResponseMatrix]:
    """Item names and responses from a CSV with a header row of item names.

    Body cells must be integer categories ``0..m-1``. Without
    ``n_categories`` each item gets ``max(observed) + 1`` categories (at
    least 2). Errors carry 1-based data-row and column coordinates.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise ParseError("missing header row of item names", 0, 1)
    names = [c.strip() for c in rows[0]]
    for c, name in enumerate(names, start=1):
        if not name:
            raise ParseError("empty item name in header", 0, c)
    width = len(names)
    body = []
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue  # blank line
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", r, min(len(row), width) + 1)
        vals = []
        for c, cell in enumerate(row, start=1):
            text = cell.strip()
            if text == "":
                raise ParseError("missing value", r, c)
            try:
                v = int(text)
            except ValueError:
                raise ParseError(f"non-integer cell {text!r}", r, c) from None
            if v < 0:
                raise ParseError(f"category {v} is negative", r, c)
            if n_categories is not None and v >= n_categories[c - 1]:
                raise ParseError(f"category {v} outside 0..{n_categories[c - 1] - 1}", r, c)
            vals.append(v)
        body.append(vals)
    u = np.array(body, dtype=np.int64).reshape(len(body), width)
    if n_categories is None:
        n_categories = tuple(max(2, int(u[:, j].max()) + 1) if len(body) else 2 for j in range(width))
    elif len(n_categories) != width:
        raise ParseError(f"{len(n_categories)} category counts for {width} items", 0, 1)
    data = ResponseMatrix(u, tuple(int(m) for m in n_categories))
    for name, counts in zip(names, data.category_counts()):
        log.info("%s: category counts %s", name, counts.tolist())
    return names, data


def parse_response_csv(path, n_categories=None) -> ResponseMatrix:
    return read_response_table(path, n_categories)[1]


def write_response_csv(data: ResponseMatrix, path, names=None) -> None:
    names = list(names) if names is not None else [f"i{j + 1}" for j in range(data.n_items)]
    if len(names) != data.n_items:
        raise InvalidInputError("one name per item required")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(names)
        w.writerows(data.responses.tolist())


def write_item_csv(bank: ItemBank, path) -> None:
    """Columns ``item, a, b2..bM``; steps are labelled by the category they lead into (1-based)."""
    width = max((it.n_categories for it in bank), default=2)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["item", "a"] + [f"b{k}" for k in range(2, width + 1)])
        for j, it in enumerate(bank, start=1):
            steps = [_fmt(s) for s in it.steps]
            w.writerow([j, _fmt(it.discrimination)] + steps + [""] * (width - 1 - len(steps)))


def read_item_csv(path) -> ItemBank:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["item", "a"]:
        raise ParseError("item file must start with columns item,a", 0, 1)
    items = []
    for r, row in enumerate(rows[1:], start=1):
        try:
            a = float(row[1])
            steps = [float(v) for v in row[2:] if v.strip() != ""]
        except (ValueError, IndexError):
            raise ParseError("non-numeric item parameter", r, 2) from None
        items.append(ItemParams(a, tuple(steps)))
    return ItemBank(items)


def write_abilities_csv(theta, sd, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["person", "theta", "sd"])
        for i, (t, s) in enumerate(zip(theta, sd), start=1):
            w.writerow([i, _fmt(t), _fmt(s)])


def read_abilities_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    try:
        return (np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows]))
    except (ValueError, IndexError) as exc:
        raise ParseError("malformed abilities file", 1, 1) from exc


# -- run configuration ------------------------------------------------------------------

@dataclass
class EmSection:
    max_cycles: int = 500
    outer_tol: float = 1e-4
    newton_max_iter: int = 20
    newton_tol: float = 1e-8
    n_nodes: int = 61
    lower: float = -5.0
    upper: float = 5.0


@dataclass
class HmcSection:
    n_chains: int = 3
    iters_per_chain: int = 600
    warmup: int = 300
    target_accept: float = 0.8
    leapfrog_range: list = field(default_factory=lambda: [10, 30])
    psrf_cutoff: float = 1.05
    max_retries: int = 5


@dataclass
class PriorSection:
    theta_mean: float = 0.0
    theta_sd: float = 1.0
    log_a_mean: float = 0.0
    log_a_sd: float = 1.0
    mu_mean: float = 0.0
    mu_sd: float = 5.0
    sigma_scale: float = 5.0


@dataclass
class RunConfig:
    """Everything a command needs; serialized as schema-versioned JSON."""

    command: str = "recover"
    method: str = "both"
    conditions: list = field(default_factory=list)  # "dist,SS,TL" strings
    full_paper_run: bool = False
    replications: int = 1
    replication: int = 1  # which replication `simulate` writes
    seed: int = 0
    data: str | None = None
    first: str | None = None
    second: str | None = None
    input: str | None = None
    out: str = "out"
    threads: int = 1
    verbosity: int = 0
    dump_draws: bool = False
    em: EmSection = field(default_factory=EmSection)
    hmc: HmcSection = field(default_factory=HmcSection)
    prior: PriorSection = field(default_factory=PriorSection)

    def to_dict(self, with_out: bool = True) -> dict:
        doc = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        if not with_out:
            del doc["out"]
        return doc

    def canonical_json(self, with_out: bool = True) -> str:
        return json.dumps(self.to_dict(with_out), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        """Hash of the configuration apart from where outputs go."""
        return hashlib.sha256(self.canonical_json(with_out=False).encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if "config" in doc and "schema_version" not in doc:
            doc = doc["config"]  # a manifest
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        sections = {"em": EmSection, "hmc": HmcSection, "prior": PriorSection}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                sec_known = {f.name for f in fields(sections[key])}
                bad = set(value) - sec_known
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                kwargs[key] = sections[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.replications < 1 or self.replication < 1:
            raise ConfigError("replication counts start at 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for key in ("data", "first", "second", "input"):
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key} path does not exist: {p}")
        try:
            self.em_config()
            self.hmc_config()
            for c in self.conditions:
                self.sim_condition(c)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc

    # -- conversions to library objects
    def em_config(self):
        from .mmle import EmConfig, QuadratureGrid

        e = self.em
        return EmConfig(QuadratureGrid.normal(e.n_nodes, e.lower, e.upper), e.max_cycles, e.outer_tol,
                        e.newton_max_iter, e.newton_tol)

    def hmc_config(self, seed=None):
        from .mcmc import HmcConfig

        h = self.hmc
        return HmcConfig(h.n_chains, h.iters_per_chain, h.warmup, h.target_accept,
                         tuple(int(v) for v in h.leapfrog_range), self.seed if seed is None else seed,
                         h.psrf_cutoff, h.max_retries, 1)

    def prior_spec(self):
        from .mcmc import PriorSpec

        return PriorSpec(**asdict(self.prior))

    def sim_condition(self, text: str):
        from .simulation import SimCondition

        return SimCondition.parse(text, self.replications, self.seed)

    def estimators(self) -> tuple[str, ...]:
        return ("mmle", "mcmc") if self.method == "both" else (self.method,)


# -- manifest ---------------------------------------------------------------------------

def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {"gpcm_recovery": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(out: Path, cfg: RunConfig, outputs: list[str], seeds: dict, results: dict | None = None):
    doc = {
        "command": cfg.command,
        "config": cfg.to_dict(with_out=False),  # outputs sit next to the manifest
        "config_sha256": cfg.digest(),
        "versions": versions(),
        "seeds": seeds,
        "outputs": {name: _sha256_file(out / name) for name in sorted(outputs)},
    }
    if results:
        doc["results"] = results
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# -- commands ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path):
    """One dataset from the first condition: responses, true abilities, generating items."""
    from .simulation import seed_int

    if len(cfg.conditions) != 1:
        raise ConfigError("simulate needs exactly one --condition")
    cond = cfg.sim_condition(cfg.conditions[0])
    thetas = cond.thetas()
    data = cond.data(cfg.replication)
    write_response_csv(data, out / "responses.csv")
    write_abilities_csv(thetas, np.zeros_like(thetas), out / "thetas.csv")
    write_item_csv(cond.bank, out / "items.csv")
    seeds = {"base_seed": cfg.seed, "replication": cfg.replication,
             "responses_seed": seed_int(cond.response_seed(cfg.replication))}
    return ["responses.csv", "thetas.csv", "items.csv"], seeds, {}


def _fit_one(method: str, data: ResponseMatrix, cfg: RunConfig, out: Path):
    from .mcmc import fit_mcmc
    from .mmle import fit_mmle

    sub = out / method
    sub.mkdir(parents=True, exist_ok=True)
    files = [f"{method}/items.csv", f"{method}/abilities.csv"]
    if method == "mmle":
        fit = fit_mmle(data, config=cfg.em_config())
        info = {"converged": fit.converged, "n_cycles": fit.n_cycles,
                "loglik": _fmt(fit.loglik_trace[-1]),
                "collapsed_items": {str(j + 1): list(m) for j, m in sorted(fit.collapse_maps.items())}}
        if not fit.converged:
            log.warning("EM stopped at max_cycles=%d without converging", cfg.em.max_cycles)
    else:
        fit = fit_mcmc(data, prior=cfg.prior_spec(), cfg=cfg.hmc_config())
        info = {"n_retries": fit.n_retries, "max_psrf": _fmt(fit.max_psrf),
                "accept_rate": [_fmt(v) for v in fit.accept_rate],
                "step_size": [_fmt(v) for v in fit.step_size]}
        with open(sub / "psrf.csv", "w", newline="", encoding="utf-8") as fh:
            w = _writer(fh)
            w.writerow(["parameter", "psrf"])
            for name, r in zip(fit.draws.names, fit.psrf):
                w.writerow([name, _fmt(r)])
        files.append(f"{method}/psrf.csv")
        if cfg.dump_draws:
            fit.draws.write_csv(sub / "draws.csv")
            files.append(f"{method}/draws.csv")
    write_item_csv(fit.bank_hat, sub / "items.csv")
    write_abilities_csv(fit.theta_hat, fit.theta_sd, sub / "abilities.csv")
    return fit, files, info


def cmd_fit(cfg: RunConfig, out: Path):
    from .simulation import compare_estimates

    if cfg.data is None:
        raise ConfigError("fit needs --data")
    data = parse_response_csv(cfg.data)
    fits, files, results = {}, [], {}
    for method in cfg.estimators():
        fits[method], f, results[method] = _fit_one(method, data, cfg, out)
        files += f
    if len(fits) == 2:
        comp = compare_estimates(fits["mmle"], fits["mcmc"])
        with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
            comp.write_csv(fh)
        files.append("compare.csv")
        results["ability_correlation"] = _fmt(comp.ability_correlation)
    return files, {"hmc_seed": cfg.seed}, results


class _SavedFit:
    def __init__(self, directory):
        d = Path(directory)
        self.bank_hat = read_item_csv(d / "items.csv")
        self.theta_hat, self.theta_sd = read_abilities_csv(d / "abilities.csv")


def cmd_compare(cfg: RunConfig, out: Path):
    """Compare two saved fit directories (each holding items.csv and abilities.csv)."""
    from .simulation import compare_estimates

    if cfg.first is None or cfg.second is None:
        raise ConfigError("compare needs --first and --second fit directories")
    comp = compare_estimates(_SavedFit(cfg.first), _SavedFit(cfg.second))
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        comp.write_csv(fh)
    return ["compare.csv"], {}, {"ability_correlation": _fmt(comp.ability_correlation),
                                 "ability_mean_diff": _fmt(comp.ability_mean_diff)}


def _recover_conditions(cfg: RunConfig):
    from .simulation import full_design

    if cfg.full_paper_run:
        return full_design(cfg.replications, cfg.seed)
    if not cfg.conditions:
        raise ConfigError("recover needs --condition or --full-paper-run")
    return [cfg.sim_condition(c) for c in cfg.conditions]


def cmd_recover(cfg: RunConfig, out: Path):
    from .simulation import EstimatorSettings, RecoveryReport, run_condition

    settings = EstimatorSettings(em=cfg.em_config(), hmc=cfg.hmc_config(), prior=cfg.prior_spec())
    names = ("tidy.csv", "summary.csv", "diagnostics.csv")
    handles = [open(out / n, "w", newline="", encoding="utf-8") for n in names]
    try:
        for fh, cols in zip(handles, (RecoveryReport.TIDY_COLUMNS, RecoveryReport.SUMMARY_COLUMNS,
                                      RecoveryReport.DIAGNOSTIC_COLUMNS)):
            _writer(fh).writerow(cols)
        for cond in _recover_conditions(cfg):
            log.info("running %s (%d replications)", cond.condition_id, cond.n_replications)
            rep = run_condition(cond, cfg.estimators(), settings, n_workers=cfg.threads)
            rep.write_tidy_csv(handles[0], header=False)
            rep.write_summary_csv(handles[1], header=False)
            rep.write_diagnostics_csv(handles[2], header=False)
    finally:
        for fh in handles:
            fh.close()
    return list(names), {"base_seed": cfg.seed}, {}


def summarize_tidy(tidy_path, diagnostics_path=None):
    """Rebuild summary rows from a tidy CSV (and exclusion counts from diagnostics)."""
    from .simulation import PARAM_CLASSES, RecoveryReport

    groups: dict = {}
    order = []
    with open(tidy_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RecoveryReport.TIDY_COLUMNS:
            raise ParseError("not a tidy recovery CSV", 0, 1)
        for row in reader:
            key = (row["condition_id"], row["distribution"], row["SS"], row["TL"], row["estimator"],
                   row["param_class"])
            if key not in groups:
                groups[key] = {}
                order.append(key)
            per = groups[key].setdefault(row["param_name"], [float(row["truth"]), []])
            per[1].append(float(row["estimate"]))
    excluded: dict = {}
    if diagnostics_path is not None and Path(diagnostics_path).exists():
        with open(diagnostics_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if row["status"] != "ok":
                    k = (row["condition_id"], row["estimator"])
                    excluded[k] = excluded.get(k, 0) + 1
    cls_rank = {c: i for i, c in enumerate(PARAM_CLASSES)}
    est_rank = {"mmle": 0, "mcmc": 1}
    cond_order = list(dict.fromkeys(k[0] for k in order))
    order.sort(key=lambda k: (cond_order.index(k[0]), est_rank.get(k[4], 9), cls_rank.get(k[5], 9)))
    rows = []
    for key in order:
        params = groups[key]
        est = np.array([v[1] for v in params.values()])  # (P, R)
        truth = np.array([v[0] for v in params.values()])
        err = est - truth[:, None]
        b = err.mean(axis=1)
        m = np.mean(err**2, axis=1)
        r = np.sqrt(m)
        ddof = 1 if b.size > 1 else 0
        stats = [b.mean(), b.std(ddof=ddof), r.mean(), r.std(ddof=ddof), m.mean(), m.std(ddof=ddof)]
        rows.append(list(key) + [len(params), est.shape[1], excluded.get((key[0], key[4]), 0)]
                    + [_fmt(s) for s in stats])
    return rows


def cmd_report(cfg: RunConfig, out: Path):
    from .simulation import RecoveryReport

    if cfg.input is None:
        raise ConfigError("report needs --input (a recover output directory)")
    src = Path(cfg.input)
    rows = summarize_tidy(src / "tidy.csv", src / "diagnostics.csv")
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(RecoveryReport.SUMMARY_COLUMNS)
        w.writerows(rows)
    return ["summary.csv"], {}, {}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "recover": cmd_recover,
            "compare": cmd_compare, "report": cmd_report}


# -- argument parsing ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpcm-recovery",
                                description="GPCM estimation (MMLE and HMC) and parameter-recovery studies.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON or a previous manifest.json to replay")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="base seed (default 0)")
    common.add_argument("--threads", type=int,
                        help="worker processes for replications (default: available cores)")
    common.add_argument("-v", "--verbose", action="count", dest="verbosity", help="more logging")
    method = argparse.ArgumentParser(add_help=False)
    method.add_argument("--method", choices=METHODS)
    cond = argparse.ArgumentParser(add_help=False)
    cond.add_argument("--condition", action="append", dest="conditions", metavar="DIST,SS,TL",
                      help="e.g. normal,500,5 (repeatable for recover)")
    cond.add_argument("--replications", type=int, help="replications per condition")

    s = sub.add_parser("simulate", parents=[common, cond], help="write one simulated dataset")
    s.add_argument("--replication", type=int, help="which replication's responses (default 1)")
    f = sub.add_parser("fit", parents=[common, method], help="fit a response CSV")
    f.add_argument("--data", help="response CSV (header of item names, integer categories)")
    f.add_argument("--dump-draws", action="store_true", default=None, help="write MCMC draws")
    r = sub.add_parser("recover", parents=[common, method, cond], help="run recovery conditions")
    r.add_argument("--full-paper-run", action="store_true", default=None,
                   help="all 27 conditions (100 replications unless --replications)")
    c = sub.add_parser("compare", parents=[common], help="compare two saved fits")
    c.add_argument("--first", help="fit directory with items.csv and abilities.csv")
    c.add_argument("--second", help="fit directory with items.csv and abilities.csv")
    rp = sub.add_parser("report", parents=[common], help="summary CSV from a recover output directory")
    rp.add_argument("--input", help="recover output directory")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.config and cfg.command != args.command:
        raise ConfigError(f"config was written for {cfg.command!r}, not {args.command!r}")
    cfg = replace(cfg, command=args.command)
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    if cfg.command == "recover" and given.get("full_paper_run") and "replications" not in given \
            and not args.config:
        given["replications"] = 100
    if "threads" not in given and not args.config:
        given["threads"] = os.cpu_count() or 1
    cfg = replace(cfg, **given)
    cfg.validate()
    return cfg


def run(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs, seeds, results = COMMANDS[cfg.command](cfg, out)
    write_manifest(out, cfg, outputs, seeds, results)
    return results


def _error_line(code: int, exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbosity or 0, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run(cfg)
    except ConfigError as exc:
        print(_error_line(EXIT_USAGE, exc), file=sys.stderr)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        print(_error_line(EXIT_NONCONVERGENCE, exc), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (GpcmError, OSError) as exc:
        print(_error_line(EXIT_DATA, exc), file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
