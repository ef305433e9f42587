"""INI run configuration: sections [problem] [meshes] [nitsche] [deform] [optimizer] [output]."""
import configparser
from dataclasses import dataclass, field
import os

from .deform import EikonalAdvect, H1
from .errors import ConfigError
from .mesh import FILL, INSULATION, METAL
from .mmassembly import NitscheParams
from .optim import OptimizerOptions
from .problems import ExampleRotation, GeometricToy, MultiCable, regular_positions

PROBLEMS = ("example_rotation", "multicable", "geometric_toy")

# key -> converter, per section; problem-specific keys are checked later
_FLOAT, _INT = float, int


def _floats(s):
    return [float(t) for t in s.replace(",", " ").split()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SCHEMA = {
    "problem": {"name": str, "reaction": _FLOAT, "t_ex": _FLOAT, "q": _FLOAT, "lambda_fill": _FLOAT,
                "lambda_iso": _FLOAT, "lambda_metal": _FLOAT, "f_metal": _FLOAT,
                "target_area": _FLOAT, "target_cx": _FLOAT, "target_cy": _FLOAT,
                "gamma1": _FLOAT, "gamma2": _FLOAT, "theta0": _FLOAT},
    "meshes": {"n": _INT, "n_t": _INT, "h": _FLOAT, "cable_radius": _FLOAT, "r_met": _FLOAT,
               "insulation": _FLOAT, "r_iso": _FLOAT, "r_halo": _FLOAT, "cables": _INT,
               "start_radius": _FLOAT, "start_angles": _floats, "quad_degree": _INT},
    "nitsche": {"beta0": _FLOAT, "beta1": _FLOAT},
    "deform": {"scheme": str, "alpha": _FLOAT, "alpha0": _FLOAT, "alpha1": _FLOAT},
    "optimizer": {"c1": _FLOAT, "factor": _FLOAT, "xi0": _FLOAT, "warm": _FLOAT,
                  "max_backtracks": _INT, "max_iter": _INT, "tol": _FLOAT},
    "output": {"dir": str, "vtk": _bool},
}

# keys that only make sense for some problems
ONLY = {
    "example_rotation": {"theta0", "n", "n_t"},
    "multicable": {"reaction", "t_ex", "q", "lambda_fill", "lambda_iso", "lambda_metal", "f_metal",
                   "h", "cable_radius", "r_met", "insulation", "r_iso", "r_halo", "cables",
                   "start_radius", "start_angles"},
    "geometric_toy": {"target_area", "target_cx", "target_cy", "gamma1", "gamma2", "n", "n_t"},
}
SCHEMES = {"example_rotation": ("rotation", "h1", "eikonal"), "multicable": ("translation",),
           "geometric_toy": ("eikonal", "h1")}


@dataclass
class RunConfig:
    problem: str = "example_rotation"
    values: dict = field(default_factory=dict)        # (section, key) -> parsed value
    nitsche: NitscheParams = field(default_factory=NitscheParams)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    scheme: str = "rotation"
    out_dir: str = "out"
    vtk: bool = True
    source: str = None

    def get(self, section, key, default=None):
        return self.values.get((section, key), default)


def _line_numbers(text):
    """(section, key) -> line number, for error messages."""
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out[(section, None)] = no
        elif section is not None and ("=" in line or ":" in line):
            key = line.split("=", 1)[0] if "=" in line else line.split(":", 1)[0]
            out.setdefault((section, key.strip().lower()), no)
    return out


def parse_config_text(text, source="<string>"):
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}: conflicting keys: [{exc.section}] {exc.option} set twice "
                          f"(line {exc.lineno})") from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}: section [{exc.section}] repeated (line {exc.lineno})") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc
    lines = _line_numbers(text)

    def where(sec, key=None):
        return f"{source}: [{sec}]" + (f" {key}" if key else "") + f" (line {lines.get((sec, key), '?')})"

    values = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{where(sec)}: unknown section")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{where(sec, key)}: unknown key")
            try:
                values[(sec, key)] = SCHEMA[sec][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{where(sec, key)}: bad value {raw!r}: {exc}") from exc

    problem = values.get(("problem", "name"), "example_rotation")
    if problem not in PROBLEMS:
        raise ConfigError(f"{where('problem', 'name')}: unknown problem {problem!r}")
    allowed_special = ONLY[problem]
    for (sec, key) in values:
        restricted = any(key in keys for keys in ONLY.values())
        if restricted and key not in allowed_special:
            raise ConfigError(f"{where(sec, key)}: not used by problem {problem}")
    for a, b in ((("meshes", "insulation"), ("meshes", "r_iso")),
                 (("deform", "alpha"), ("deform", "alpha0"))):
        if a in values and b in values:
            raise ConfigError(f"{where(*b)}: conflicts with {a[1]} (line {lines.get(a, '?')})")

    scheme = values.get(("deform", "scheme"), SCHEMES[problem][0])
    if scheme not in SCHEMES[problem]:
        raise ConfigError(f"{where('deform', 'scheme')}: scheme {scheme!r} not available for {problem}")
    if scheme != "eikonal" and ("deform", "alpha1") in values:
        raise ConfigError(f"{where('deform', 'alpha1')}: only the eikonal scheme uses alpha1")

    try:
        nitsche = NitscheParams(**{k: values[("nitsche", k)] for k in ("beta0", "beta1")
                                   if ("nitsche", k) in values})
        opts = OptimizerOptions(**{k: v for (s, k), v in values.items() if s == "optimizer"})
    except (ConfigError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = RunConfig(problem, values, nitsche, opts, scheme,
                    values.get(("output", "dir"), "out"), values.get(("output", "vtk"), True), source)
    build_problem(cfg)    # validate ranges early
    return cfg


def parse_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read(), source=path)


def _design_scheme(cfg):
    if cfg.scheme == "h1":
        return H1(cfg.get("deform", "alpha", 1e-3))
    return EikonalAdvect(cfg.get("deform", "alpha0", 1e-3), cfg.get("deform", "alpha1", 25.0))


def build_problem(cfg):
    """Problem object for a parsed configuration (defaults are the built-in ones)."""
    g = cfg.get
    try:
        if cfg.problem == "example_rotation":
            kw = {k: g("meshes", k) for k in ("n", "n_t") if g("meshes", k) is not None}
            pr = ExampleRotation(alpha=g("deform", "alpha", 1e-3), params=cfg.nitsche, **kw)
            if cfg.scheme != "rotation":
                from .deform import BoundaryNodes
                pr.designs = [BoundaryNodes(0, _design_scheme(cfg))]
            return pr
        if cfg.problem == "multicable":
            lam = {FILL: g("problem", "lambda_fill", 0.08), INSULATION: g("problem", "lambda_iso", 0.19),
                   METAL: g("problem", "lambda_metal", 40.0)}
            src = {FILL: 0.0, INSULATION: 0.0, METAL: g("problem", "f_metal", 50.0)}
            r_met = g("meshes", "r_met", 0.2)
            ins = g("meshes", "insulation", 0.055)
            if g("meshes", "r_iso") is not None:
                ins = g("meshes", "r_iso") - r_met
            ncab = g("meshes", "cables", 3)
            angles = g("meshes", "start_angles")
            if angles is None:
                angles = [90.0, 200.0, 320.0] if ncab == 3 else None
            elif len(angles) != ncab:
                raise ConfigError("start_angles must list one angle per cable")
            centers = regular_positions(ncab, g("meshes", "start_radius", 0.45), angles_deg=angles)
            kw = {k: g("meshes", k) for k in ("h", "r_halo") if g("meshes", k) is not None}
            return MultiCable(centers=centers, R=g("meshes", "cable_radius", 1.2), r_met=r_met,
                              insulation=ins, reaction=g("problem", "reaction", 0.04),
                              t_ex=g("problem", "t_ex", 3.2), q=g("problem", "q", 3.0),
                              conductivity=lam, source=src, params=cfg.nitsche, **kw)
        kw = {k: g("meshes", k) for k in ("n", "n_t") if g("meshes", k) is not None}
        return GeometricToy(target_area=g("problem", "target_area", 0.05),
                            target_centroid=(g("problem", "target_cx", 0.5), g("problem", "target_cy", 0.5)),
                            gamma1=g("problem", "gamma1", 1e3), gamma2=g("problem", "gamma2", 1e3),
                            scheme=_design_scheme(cfg), **kw)
    except ConfigError as exc:
        raise ConfigError(f"{cfg.source}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{cfg.source}: invalid parameter: {exc}") from exc
