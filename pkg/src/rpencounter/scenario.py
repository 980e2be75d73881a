"""Scenario files: TOML with sections [system], [reaction], [detection], [rate], [run].

A parsed scenario is a plain, fully defaulted dictionary, so rendering it back
to TOML and parsing again gives an equal scenario.  Unknown keys are errors.

Example::

    [system]
    field = [0.0, 0.0, 0.0]
    nuclei = [{radical = 1, spin = 0.5, hyperfine = 1.0}]

    [reaction.encounter]
    mode = "triplet_symmetric_no_t_dephasing"
    kappa = 1.5707963267948966
    pi = {S = 1.0, T = 1.0}

    [detection]
    S = 1.0
    T = 0.0

    [rate]
    kind = "constant"
    r = 1.0

    [run]
    t_grid = {start = 0.0, stop = 30.0, num = 301}
    initial = {S = 0.9999999999, T = 1e-10}

Complex amplitudes are written either as a number or as a [re, im] pair.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import tomli
import tomli_w

from .encounter import DetectionEfficiencies, EncounterCoupling
from .qcore import LABELS, HilbertLayout
from .reactops import MODES, ReactionRates
from .spinham import SpinSystemSpec, make_nucleus
from .stochastic import RATE_KINDS, RateModel

RUN_MODES = ("me", "dark", "traj", "ensemble", "yield", "classify", "oracle")
CHANNELS = LABELS + ("T",)
INITIAL_KEYS = CHANNELS + ("P",)


class ScenarioError(ValueError):
    """Parse or validation failure; the message names the offending field."""


def _fail(where: str, msg: str):
    raise ScenarioError(f"{where}: {msg}")


def _float(where, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(where, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        _fail(where, f"expected a finite number, got {v!r}")
    return v


def _int(where, v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(where, f"expected an integer, got {v!r}")
    return int(v)


def _str(where, v, choices=None) -> str:
    if not isinstance(v, str):
        _fail(where, f"expected a string, got {v!r}")
    if choices is not None and v not in choices:
        _fail(where, f"expected one of {list(choices)}, got {v!r}")
    return v


def _bool(where, v) -> bool:
    if not isinstance(v, bool):
        _fail(where, f"expected true or false, got {v!r}")
    return v


def _table(where, v) -> dict:
    if not isinstance(v, dict):
        _fail(where, f"expected a table, got {v!r}")
    return v


def _keys(where, table: dict, allowed):
    extra = sorted(set(table) - set(allowed))
    if extra:
        _fail(where, f"unknown key(s) {extra}; allowed: {sorted(allowed)}")


def _complex_pair(where, v) -> list:
    if isinstance(v, list):
        if len(v) != 2:
            _fail(where, f"complex value must be [re, im], got {v!r}")
        return [_float(where, v[0]), _float(where, v[1])]
    return [_float(where, v), 0.0]


def _channel_map(where, v, complex_values=False, keys=CHANNELS) -> dict:
    v = _table(where, v)
    _keys(where, v, keys)
    conv = _complex_pair if complex_values else _float
    return {k: conv(f"{where}.{k}", v[k]) for k in sorted(v)}


def _parse_system(t: dict) -> dict:
    w = "[system]"
    _keys(w, t, ("field", "g", "nuclei", "high_field"))
    field = t.get("field", [0.0, 0.0, 0.0])
    if not isinstance(field, list) or len(field) != 3:
        _fail(f"{w}.field", f"expected a 3-vector, got {field!r}")
    g = t.get("g", [1.0, 1.0])
    if not isinstance(g, list) or len(g) != 2:
        _fail(f"{w}.g", f"expected two g factors, got {g!r}")
    nuclei = []
    raw = t.get("nuclei", [])
    if not isinstance(raw, list):
        _fail(f"{w}.nuclei", "expected a list of tables")
    for i, n in enumerate(raw):
        wn = f"{w}.nuclei[{i}]"
        n = _table(wn, n)
        _keys(wn, n, ("radical", "spin", "hyperfine"))
        for req in ("radical", "spin", "hyperfine"):
            if req not in n:
                _fail(wn, f"missing key {req!r}")
        hf = n["hyperfine"]
        if isinstance(hf, list):
            if len(hf) != 3 or not all(isinstance(row, list) and len(row) == 3 for row in hf):
                _fail(f"{wn}.hyperfine", "expected a number or a 3x3 list")
            hf = [[_float(f"{wn}.hyperfine", x) for x in row] for row in hf]
        else:
            hf = _float(f"{wn}.hyperfine", hf)
        entry = {"radical": _int(f"{wn}.radical", n["radical"]),
                 "spin": _float(f"{wn}.spin", n["spin"]), "hyperfine": hf}
        try:
            make_nucleus(entry["radical"], entry["spin"], hf)
        except ValueError as e:
            _fail(wn, str(e))
        nuclei.append(entry)
    return {
        "field": [_float(f"{w}.field", x) for x in field],
        "g": [_float(f"{w}.g", x) for x in g],
        "nuclei": nuclei,
        "high_field": _bool(f"{w}.high_field", t.get("high_field", False)),
    }


def _parse_coupling(where, t: dict, default_mode="general") -> dict:
    _keys(where, t, ("mode", "kappa", "pi", "delta", "weight"))
    if "kappa" not in t:
        _fail(where, "missing key 'kappa'")
    out = {
        "mode": _str(f"{where}.mode", t.get("mode", default_mode), MODES),
        "kappa": _float(f"{where}.kappa", t["kappa"]),
        "pi": _channel_map(f"{where}.pi", t.get("pi", {}), True),
        "delta": _channel_map(f"{where}.delta", t.get("delta", {}), True),
    }
    return out


def _parse_reaction(t: dict) -> dict:
    w = "[reaction]"
    _keys(w, t, ("rates", "encounter", "average"))
    models = [k for k in ("rates", "encounter", "average") if k in t]
    if len(models) != 1:
        _fail(w, f"exactly one reaction model is required (rates, encounter or average), got {models}")
    kind = models[0]
    if kind == "rates":
        wr = f"{w}.rates"
        r = _table(wr, t["rates"])
        _keys(wr, r, ("mode", "r", "d"))
        return {"rates": {
            "mode": _str(f"{wr}.mode", r.get("mode", "general"), MODES),
            "r": _channel_map(f"{wr}.r", r.get("r", {})),
            "d": _channel_map(f"{wr}.d", r.get("d", {})),
        }}
    if kind == "encounter":
        return {"encounter": _parse_coupling(f"{w}.encounter", _table(f"{w}.encounter", t["encounter"]))}
    entries = t["average"]
    if not isinstance(entries, list) or not entries:
        _fail(f"{w}.average", "expected a non-empty list of weighted couplings")
    out = []
    for i, e in enumerate(entries):
        we = f"{w}.average[{i}]"
        e = _table(we, e)
        if "weight" not in e:
            _fail(we, "missing key 'weight'")
        c = _parse_coupling(we, e)
        c["weight"] = _float(f"{we}.weight", e["weight"])
        out.append(c)
    return {"average": out}


def _parse_detection(t: dict) -> dict:
    return _channel_map("[detection]", t) if t else {"S": 1.0, "T": 1.0}


def _parse_rate(t: dict) -> dict:
    w = "[rate]"
    _keys(w, t, ("kind", "r", "a", "mu", "t_inf"))
    out = {
        "kind": _str(f"{w}.kind", t.get("kind", "constant"), RATE_KINDS),
        "r": _float(f"{w}.r", t.get("r", 1.0)),
        "a": _float(f"{w}.a", t.get("a", 0.0)),
        "mu": _float(f"{w}.mu", t.get("mu", 1.5)),
    }
    if "t_inf" in t:
        out["t_inf"] = _float(f"{w}.t_inf", t["t_inf"])
    return out


def _parse_run(t: dict) -> dict:
    w = "[run]"
    allowed = ("mode", "t_grid", "n_traj", "n_cloud", "seed", "output", "initial", "conditioning",
               "policy", "angles", "delta_b", "t_max", "dt", "functional_rtol")
    _keys(w, t, allowed)
    out = {}
    if "mode" in t:
        out["mode"] = _str(f"{w}.mode", t["mode"], RUN_MODES)
    grid = t.get("t_grid", {"start": 0.0, "stop": 10.0, "num": 101})
    if isinstance(grid, dict):
        _keys(f"{w}.t_grid", grid, ("start", "stop", "num"))
        grid = {"start": _float(f"{w}.t_grid.start", grid.get("start", 0.0)),
                "stop": _float(f"{w}.t_grid.stop", grid.get("stop", 10.0)),
                "num": _int(f"{w}.t_grid.num", grid.get("num", 101))}
        if grid["num"] < 1 or grid["stop"] < grid["start"] or grid["start"] < 0:
            _fail(f"{w}.t_grid", "need 0 <= start <= stop and num >= 1")
    elif isinstance(grid, list):
        grid = [_float(f"{w}.t_grid", x) for x in grid]
        if not grid or any(b < a for a, b in zip(grid, grid[1:])) or grid[0] < 0:
            _fail(f"{w}.t_grid", "time list must be non-empty, non-negative and sorted")
    else:
        _fail(f"{w}.t_grid", "expected a {start, stop, num} table or a list of times")
    out["t_grid"] = grid
    out["n_traj"] = _int(f"{w}.n_traj", t.get("n_traj", 1000))
    if out["n_traj"] < 1:
        _fail(f"{w}.n_traj", "must be >= 1")
    if "n_cloud" in t:
        out["n_cloud"] = _int(f"{w}.n_cloud", t["n_cloud"])
        if out["n_cloud"] < 1:
            _fail(f"{w}.n_cloud", "must be >= 1")
    if "seed" in t:
        out["seed"] = _int(f"{w}.seed", t["seed"])
        if not 0 <= out["seed"] < 2 ** 64:
            _fail(f"{w}.seed", "must be an unsigned 64-bit integer")
    out["output"] = _str(f"{w}.output", t.get("output", "out"))
    init = t.get("initial", "singlet")
    if isinstance(init, str):
        init = _str(f"{w}.initial", init, ("singlet",))
    else:
        init = _channel_map(f"{w}.initial", init, keys=INITIAL_KEYS)
        if any(v < 0 for v in init.values()) or sum(init.values()) > 1 + 1e-12:
            _fail(f"{w}.initial", "populations must be >= 0 and sum to <= 1")
        if sum(init.values()) <= 0:
            _fail(f"{w}.initial", "populations must not all vanish")
    out["initial"] = init
    out["conditioning"] = _str(f"{w}.conditioning", t.get("conditioning", "unconditional"),
                               ("unconditional", "dark"))
    out["policy"] = _str(f"{w}.policy", t.get("policy", "discard"), ("discard", "abort"))
    out["angles"] = [_float(f"{w}.angles", x) for x in t.get("angles", [0.0])]
    out["delta_b"] = _float(f"{w}.delta_b", t.get("delta_b", 1e-3))
    if "t_max" in t:
        out["t_max"] = _float(f"{w}.t_max", t["t_max"])
    if "dt" in t:
        out["dt"] = _float(f"{w}.dt", t["dt"])
    out["functional_rtol"] = _float(f"{w}.functional_rtol", t.get("functional_rtol", 1e-8))
    return out


SECTIONS = ("system", "reaction", "detection", "rate", "run")


def parse_scenario(text: str) -> "Scenario":
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        pos = getattr(e, "pos", None)
        if pos is None:
            raise ScenarioError(f"parse error: {e}") from None
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        msg = getattr(e, "msg", str(e))
        raise ScenarioError(f"parse error at line {line}, column {col}: {msg}") from None
    _keys("scenario", raw, SECTIONS)
    if "reaction" not in raw:
        _fail("[reaction]", "exactly one reaction model is required (rates, encounter or average)")
    data = {
        "system": _parse_system(_table("[system]", raw.get("system", {}))),
        "reaction": _parse_reaction(_table("[reaction]", raw["reaction"])),
        "detection": _parse_detection(_table("[detection]", raw.get("detection", {}))),
        "rate": _parse_rate(_table("[rate]", raw.get("rate", {}))),
        "run": _parse_run(_table("[run]", raw.get("run", {}))),
    }
    sc = Scenario(data)
    sc.validate()
    return sc


def render_scenario(sc: "Scenario") -> str:
    return tomli_w.dumps(sc.data)


@dataclass
class Scenario:
    data: dict

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data

    def copy(self) -> "Scenario":
        return Scenario(copy.deepcopy(self.data))

    @property
    def run(self) -> dict:
        return self.data["run"]

    @property
    def reaction_kind(self) -> str:
        return next(iter(self.data["reaction"]))

    def validate(self):
        """Build every domain object once so semantic errors surface at parse time."""
        self.spin_spec()
        self.rate_model()
        self.efficiencies()
        if self.reaction_kind == "rates":
            self.rates()
        else:
            self.couplings()

    def spin_spec(self) -> SpinSystemSpec:
        s = self.data["system"]
        nuclei = tuple(make_nucleus(n["radical"], n["spin"], n["hyperfine"]) for n in s["nuclei"])
        return SpinSystemSpec(np.array(s["field"], dtype=float), tuple(s["g"]), nuclei)

    def layout(self) -> HilbertLayout:
        return self.spin_spec().layout(self.data["system"]["high_field"])

    def rates(self) -> ReactionRates:
        r = self.data["reaction"]["rates"]
        try:
            return ReactionRates(dict(r["r"]), dict(r["d"]), r["mode"])
        except ValueError as e:
            _fail("[reaction.rates]", str(e))

    def couplings(self) -> list:
        """[(weight, EncounterCoupling)] for encounter or averaged models."""
        reaction = self.data["reaction"]
        entries = reaction["average"] if "average" in reaction else [dict(reaction["encounter"], weight=1.0)]
        where = "[reaction.average]" if "average" in reaction else "[reaction.encounter]"
        out = []
        for e in entries:
            try:
                c = EncounterCoupling(e["kappa"], {k: complex(*v) for k, v in e["pi"].items()},
                                      {k: complex(*v) for k, v in e["delta"].items()}, e["mode"])
            except ValueError as err:
                _fail(where, str(err))
            out.append((e["weight"], c))
        w = [x for x, _ in out]
        if any(x < 0 for x in w) or abs(sum(w) - 1) > 1e-12:
            _fail(where, f"weights must be non-negative and sum to 1, got {w}")
        if len({c.mode for _, c in out}) != 1:
            _fail(where, "all averaged couplings must share one symmetry mode")
        return out

    def efficiencies(self) -> DetectionEfficiencies:
        try:
            return DetectionEfficiencies(dict(self.data["detection"]))
        except ValueError as e:
            _fail("[detection]", str(e))

    def rate_model(self) -> RateModel:
        r = self.data["rate"]
        try:
            return RateModel(r["kind"], r["r"], r["a"], r["mu"], r.get("t_inf"))
        except ValueError as e:
            _fail("[rate]", str(e))

    def grid(self) -> np.ndarray:
        g = self.run["t_grid"]
        if isinstance(g, dict):
            return np.linspace(g["start"], g["stop"], g["num"])
        return np.array(g, dtype=float)

    def initial_state(self, layout: HilbertLayout) -> np.ndarray:
        init = self.run["initial"]
        if init == "singlet":
            return layout.pure_state({"S": 1.0})
        pops = dict(init)
        if layout.high_field:
            t = pops.pop("T", 0.0)
            if any(pops.get(k, 0) for k in ("T+", "T-")):
                _fail("[run].initial", "T+ and T- are absent in the high-field layout")
            pops["T0"] = pops.get("T0", 0.0) + t
            pops.pop("T+", None)
            pops.pop("T-", None)
        rho = layout.mixed_state(pops)
        return rho / np.trace(rho).real
