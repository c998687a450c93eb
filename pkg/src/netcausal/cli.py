"""Command-line driver: ``netcausal <subcommand> SPEC.json``.

Seeds. Every spec carries a master ``seed``. Unless a block sets its own
``seed``, streams are derived as ``split_seeds(seed, 4)``, in order: interaction
matrix, estimator replicates, simulated data, Glauber chains.

Outputs. CSVs start with a ``# schema:`` line and contain only deterministic
fields; wall times go to ``<csv>.meta.json``. ``bench`` is the exception and
writes wall times inline. Nothing is written unless the run succeeds.

Exit codes: 0 ok, 2 spec error, 3 method precondition, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .model import (InteractionMatrix, OutcomeParams, PropensityParams,
                    covariate_distribution, make_interaction, sample_treatments)
from .rng import split_seeds

SPEC_VERSION = "1"
EXIT_OK, EXIT_SPEC, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3, 4

EFFECT_COLUMNS = ["method", "n", "seed", "k_replicates", "tau", "theta", "gamma",
                  "de", "ie", "se_de", "se_ie", "runtime"]
LIMIT_COLUMNS = ["coupling", "tau", "de_inf", "ie_inf", "fd_gap"]
MIXING_COLUMNS = ["n", "seed", "sweeps", "tau", "gap"]
FIT_COLUMNS = ["n", "seed", "tau_hat", "theta_hat", "gamma_hat", "grad_norm", "iterations", "flags"]

_NUM = {"type": "number"}
_INT = {"type": "integer"}

SPEC_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "seed", "model", "params", "method"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SPEC_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "required": ["n", "interaction"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "interaction": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["zero", "curie_weiss", "block_model", "erdos_renyi",
                                          "regular_graph", "gaussian"]},
                        "params": {"type": "object"},
                        "file": {"type": "string"},
                        "seed": _INT,
                    },
                    "oneOf": [{"required": ["kind"]}, {"required": ["file"]}],
                },
                "covariates": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["none", "uniform_grid", "rademacher_d", "custom_finite",
                                          "uniform_box"]},
                        "d": _INT, "levels": _INT,
                        "support": {"type": "array"}, "probs": {"type": "array"},
                    },
                },
                "propensity": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "beta": _NUM,
                        "gamma": {"type": "array", "items": _NUM},
                        "glauber_steps": _INT,
                    },
                },
                "data": {"type": "string"},
            },
        },
        "params": {
            "type": "object",
            "required": ["tau"],
            "additionalProperties": False,
            "properties": {
                "tau": _NUM,
                "theta": {"type": "array", "items": _NUM},
                "gamma": _NUM,
                "tau_bound": _NUM,
                "theta_bound": _NUM,
            },
        },
        "method": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": ["oracle", "block", "amp", "glauber", "limits"]},
                "seed": _INT,
                "bench": {"type": "array", "items": {"enum": ["oracle", "block", "amp", "glauber"]}},
            },
        },
        "replicates": {"type": "integer", "minimum": 1},
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"sweeps": {"type": "integer", "minimum": 1}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in ("csv", "matrix", "data", "json", "trace")},
        },
    },
}


class SpecError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


def load_spec(path) -> dict:
    """Parse and validate a spec file; problems become ``SpecError`` with a location."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(SPEC_SCHEMA)
    errors = sorted(validator.iter_errors(spec), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{path}: field {where}{_line_hint(text, e)}: {e.message}")
        raise SpecError("\n".join(lines))
    return spec


def _line_hint(text: str, err) -> str:
    path = list(err.absolute_path)
    key = next((p for p in reversed(path) if isinstance(p, str)), None)
    if key is None:
        return ""
    for no, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return f" (line {no})"
    return ""


class Experiment:
    """Resolved objects for one spec."""

    def __init__(self, spec: dict, out: str | None = None):
        self.spec = spec
        self.seed = spec["seed"]
        s_int, s_rep, s_data, s_chain = split_seeds(self.seed, 4)
        model = spec["model"]
        self.n = model["n"]
        inter = model["interaction"]
        self.interaction_seed = inter.get("seed", s_int)
        self.replicate_seed = spec["method"].get("seed", s_rep)
        self.data_seed = s_data
        self.chain_seed = s_chain
        self.method = spec["method"]
        self.replicates = spec.get("replicates", 200)
        prm = spec["params"]
        self.params = OutcomeParams(prm["tau"], prm.get("theta", []), prm.get("gamma", 0.0))
        self.output = dict(spec.get("output", {}))
        if out is not None:
            self.output["csv"] = out
        cov = model.get("covariates", {"kind": "none"})
        self.x_dist = covariate_distribution(cov["kind"], cov.get("d", 1), cov.get("levels", 2),
                                             cov.get("support"), cov.get("probs"))
        if self.params.d != self.x_dist.d:
            raise SpecError(f"params/theta has length {self.params.d} but covariates have "
                            f"dimension {self.x_dist.d}")
        if "file" in inter:
            A = io.read_matrix(inter["file"])
            if A.shape[0] != self.n:
                raise SpecError(f"matrix file has n={A.shape[0]}, model/n is {self.n}")
            self.A = InteractionMatrix(A, kind="file", params={"file": inter["file"]})
        else:
            self.A = make_interaction(inter["kind"], self.n, self.interaction_seed,
                                      **inter.get("params", {}))

    def row(self, est) -> dict:
        return {"method": est.method, "n": est.n, "seed": self.replicate_seed,
                "k_replicates": len(est.seeds), "tau": self.params.tau,
                "theta": self.params.theta, "gamma": self.params.gamma,
                "de": est.de, "ie": est.ie, "se_de": est.se_de, "se_ie": est.se_ie,
                "runtime": None}

    def csv_path(self, default: str) -> str:
        return self.output.get("csv", default)


def _estimate(exp: Experiment, name: str):
    m = exp.method
    p = exp.params
    k = exp.replicates
    if name == "oracle":
        from .oracle import OracleLimit, exact_effects

        limit = OracleLimit(max_treatment_n=m.get("max_treatment_n", 14))
        return exact_effects(exp.A, exp.x_dist, p, mode=m.get("mode", "full"), k=k,
                             seed=exp.replicate_seed, limit=limit)
    if name == "block":
        from .block import BlockEstimatorConfig, estimate_effects

        cfg = BlockEstimatorConfig(eps=m.get("eps", 0.1), k_replicates=k, seed=exp.replicate_seed,
                                   max_blocks=m.get("max_blocks", 3), block_cap=m.get("block_cap", 3),
                                   m_levels=m.get("m_levels"))
        return estimate_effects(exp.A, exp.x_dist, p, config=cfg)
    if name == "amp":
        from .amp import AmpConfig, amp_effects

        if exp.A.kind != "gaussian":
            raise PreconditionError("amp needs a gaussian interaction (standardized coupling)")
        beta = float(exp.A.params["beta"])
        if beta == 0:
            raise PreconditionError("amp needs beta > 0")
        if p.gamma != 0:
            raise PreconditionError("amp supports gamma = 0 only")
        cfg = AmpConfig(M=m.get("M", 30), J=m.get("J", 1), k_replicates=k, seed=exp.replicate_seed,
                        paper_literal_amp_estimators=m.get("paper_literal_amp_estimators", False))
        return amp_effects(exp.A.entries / beta, beta, p.tau, exp.x_dist, p.theta, cfg)
    if name == "glauber":
        from .glauber import ChainConfig, glauber_effects

        sweeps = m.get("sweeps", 1000)
        chain = ChainConfig(sweeps, m.get("burn_in", sweeps // 10), m.get("thin", 1))
        return glauber_effects(exp.A, exp.x_dist, p, chain, k, exp.replicate_seed)
    raise SpecError(f"method/name {name!r} does not produce effect estimates")


def _graphon(exp: Experiment):
    from .limits import BlockGraphon

    kind = exp.A.kind
    prm = exp.A.params
    if kind == "zero":
        return BlockGraphon(np.zeros((1, 1)), [1.0])
    if kind == "curie_weiss":
        return BlockGraphon.constant(float(prm.get("beta", 1.0)))
    if kind == "block_model":
        alpha, beta = float(prm["alpha"]), float(prm["beta"])
        if "sizes" in prm:
            w = np.asarray(prm["sizes"], dtype=float) / exp.n
        else:
            f = float(prm.get("fraction", 0.5))
            w = np.array([f, 1 - f])
        keep = w > 0
        B = int(keep.sum())
        W = np.full((len(w), len(w)), beta)
        np.fill_diagonal(W, alpha)
        return BlockGraphon(W[np.ix_(keep, keep)].reshape(B, B), w[keep])
    raise PreconditionError(f"no block-constant limit for interaction kind {kind!r}")


def cmd_estimate(exp: Experiment, method: str | None):
    name = method or exp.method["name"]
    est = _estimate(exp, name)
    path = exp.csv_path(f"{name}.csv")
    meta = {"runtime": est.runtime, "meta": est.meta, "seed": exp.seed}
    return [(path, [exp.row(est)], EFFECT_COLUMNS, meta)]


def cmd_limits(exp: Experiment):
    from .limits import FieldLevels, limiting_effects_graphon
    from .parisi import covariate_field_law, limiting_effects

    start = time.perf_counter()
    law = covariate_field_law(exp.x_dist, exp.params.theta)
    if exp.params.gamma != 0:
        raise PreconditionError("limits are defined at gamma = 0")
    if exp.A.kind == "gaussian":
        beta = float(exp.A.params["beta"])
        res = limiting_effects(beta, exp.params.tau, law, exp.method.get("J", 1))
        row = {"coupling": f"gaussian:beta={beta!r}", "tau": exp.params.tau,
               "de_inf": res.de, "ie_inf": res.ie, "fd_gap": None}
    else:
        W = _graphon(exp)
        res = limiting_effects_graphon(W, exp.params.tau, FieldLevels(law.values, law.probs),
                                       exp.method.get("fd_step", 1e-3))
        label = f"beta={float(W.W[0, 0])!r}" if W.B == 1 else f"W:{W.digest()}"
        row = {"coupling": label, "tau": exp.params.tau, "de_inf": res.de, "ie_inf": res.ie,
               "fd_gap": res.fd_gap}
    meta = {"runtime": time.perf_counter() - start, "seed": exp.seed}
    return [(exp.csv_path("limits.csv"), [row], LIMIT_COLUMNS, meta)]


def cmd_mixing(exp: Experiment):
    from .glauber import ChainConfig, metastability_gap, run_chain, write_trace_csv
    from .model import draw_replicate

    start = time.perf_counter()
    sweeps = exp.method.get("sweeps", 10_000)
    draw = draw_replicate(exp.n, exp.x_dist, exp.data_seed)
    cfg = ChainConfig(sweeps, exp.method.get("burn_in", 0), exp.method.get("thin", 1),
                      seed=exp.chain_seed)
    gap = metastability_gap(exp.A, draw.t_bar, draw.x_bar, exp.params, cfg)
    outs = []
    if "trace" in exp.output:
        res = run_chain(ChainConfig(sweeps, 0, 1, "all_plus", exp.chain_seed), draw.t_bar,
                        draw.x_bar, exp.A, exp.params)
        outs.append(("trace", res, write_trace_csv))
    row = {"n": exp.n, "seed": exp.seed, "sweeps": sweeps, "tau": exp.params.tau, "gap": gap}
    meta = {"runtime": time.perf_counter() - start, "seed": exp.seed}
    return [(exp.csv_path("mixing.csv"), [row], MIXING_COLUMNS, meta)] + outs


def simulate_data(exp: Experiment):
    """Draw covariates, treatments and Glauber outcomes from the configured model."""
    from .glauber import sample_outcomes
    from .rng import make_rng

    s_x, s_t, s_y = split_seeds(exp.data_seed, 3)
    x = exp.x_dist.sample(exp.n, make_rng(s_x))
    prop = exp.spec["model"].get("propensity", {})
    M = make_interaction("curie_weiss", exp.n, beta=prop.get("beta", 0.0)).entries
    gamma0 = prop.get("gamma", [])
    if len(gamma0) not in (0, exp.x_dist.d):
        raise SpecError("model/propensity/gamma length must match the covariate dimension")
    t = sample_treatments(PropensityParams(M, gamma0), x, prop.get("glauber_steps", 100 * exp.n), s_t)
    sweeps = exp.spec.get("simulate", {}).get("sweeps", 200)
    y = sample_outcomes(exp.A, t, x, exp.params, sweeps, s_y)
    return y, t, x.values, M


def cmd_generate(exp: Experiment):
    start = time.perf_counter()
    matrix = exp.output.get("matrix", "interaction.txt")
    y, t, x, _ = simulate_data(exp)
    meta = {"runtime": time.perf_counter() - start, "seed": exp.seed}
    return [("matrix", matrix, exp.A.entries),
            ("data", exp.output.get("data", "data.csv"), (y, t, x)),
            ("json", matrix + ".meta.json", meta)]


def cmd_fit(exp: Experiment):
    from .inference import NewtonParams, ObservedData, fit_mpl, fit_propensity

    start = time.perf_counter()
    if "data" in exp.spec["model"]:
        y, t, x = io.read_dataset(exp.spec["model"]["data"])
        if y.size != exp.n:
            raise SpecError(f"data file has {y.size} rows, model/n is {exp.n}")
        prop = exp.spec["model"].get("propensity", {})
        M = make_interaction("curie_weiss", exp.n, beta=prop.get("beta", 0.0)).entries
    else:
        y, t, x, M = simulate_data(exp)
    prm = exp.spec["params"]
    newton = NewtonParams(tau_bound=prm.get("tau_bound", 5.0), theta_bound=prm.get("theta_bound", 5.0))
    data = ObservedData(y, t, x, exp.A, M)
    fit = fit_mpl(data, newton=newton)
    report = fit.report()
    if x.shape[1]:
        report["gamma_hat"] = fit_propensity(data, newton=newton).report()["gamma_hat"]
    row = {"n": exp.n, "seed": exp.seed, **report}
    row["flags"] = "|".join(report["flags"])
    meta = {"runtime": time.perf_counter() - start, "seed": exp.seed}
    outs = [(exp.csv_path("fit.csv"), [row], FIT_COLUMNS, meta)]
    if "json" in exp.output:
        outs.append(("json", exp.output["json"], report))
    return outs


def cmd_bench(exp: Experiment):
    methods = exp.method.get("bench", ["oracle", "block", "glauber"])
    rows = []
    for name in methods:
        try:
            est = _estimate(exp, name)
        except (PreconditionError, ValueError) as exc:
            rows.append({"method": name, "n": exp.n, "seed": exp.replicate_seed,
                         "runtime": None, "error": str(exc)})
            continue
        r = exp.row(est)
        r["runtime"] = est.runtime
        rows.append(r)
    return [(exp.csv_path("bench.csv"), rows, EFFECT_COLUMNS + ["error"], {"seed": exp.seed})]


def _write(outputs) -> list[str]:
    written = []
    for item in outputs:
        if item[0] == "matrix":
            io.write_matrix(item[2], item[1])
        elif item[0] == "data":
            io.write_dataset(item[1], *item[2])
        elif item[0] == "json":
            io.atomic_write(item[1], json.dumps(item[2], indent=2, sort_keys=True, default=str))
        elif item[0] == "trace":
            continue
        else:
            path, rows, cols, meta = item
            io.write_outputs(path, rows, cols, meta)
        written.append(str(item[1]) if item[0] != "trace" else "")
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netcausal", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "estimate", "oracle", "fit", "limits", "mixing", "bench"):
        sp = sub.add_parser(name)
        sp.add_argument("spec", help="experiment spec (JSON)")
        sp.add_argument("--out", help="override output CSV path")
        if name == "estimate":
            sp.add_argument("--method", choices=["block", "amp", "glauber", "oracle"])
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .amp import AmpRangeError
    from .limits import NonDifferentiablePoint
    from .parisi import GridTooSmall

    try:
        exp = Experiment(load_spec(args.spec), args.out)
        if args.command == "estimate":
            outputs = cmd_estimate(exp, args.method)
        elif args.command == "oracle":
            outputs = cmd_estimate(exp, "oracle")
        elif args.command == "limits":
            outputs = cmd_limits(exp)
        elif args.command == "mixing":
            outputs = cmd_mixing(exp)
        elif args.command == "generate":
            outputs = cmd_generate(exp)
        elif args.command == "fit":
            outputs = cmd_fit(exp)
        else:
            outputs = cmd_bench(exp)
        for item in outputs:
            if item[0] == "trace":
                item[2](item[1], exp.output["trace"])
        _write(outputs)
    except (SpecError, jsonschema.ValidationError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (AmpRangeError, NonDifferentiablePoint, GridTooSmall, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PreconditionError, ValueError, KeyError, OSError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
