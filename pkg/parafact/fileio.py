"""
Equation, map and lattice files.

Equation and map files are UTF-8 key-value files split into [sections];
expression values are double-quoted DSL text. Lattice files are line records.
The grammars are documented in docs/grammar.md.
"""
import logging
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import sympy as sp

from parafact.core.exceptions import DomainError, InputError, LoadError, ParseError
from parafact.domain import Domain, Interval, Periodic, parse_interval, parse_modulus
from parafact.equation import GeometricEquation, ParabolicEquation, expand_geometry, index_pairs
from parafact.expr import VariableContext, VarRole, parse, tidy, to_text
from parafact.lattice import Lattice
from parafact.morphism import FiberedMap
from parafact.opaque import defined_function, opaque_nodes
from parafact.schemas import ArrowKind, LatticeArrow, LatticeCoincidence, LatticeIntersection, MapShape

logger = logging.getLogger(__name__)

EQUATION_SECTIONS = ("meta", "vars", "params", "functions", "coeffs", "geometry")
MAP_SECTIONS = ("meta", "vars", "params", "functions", "map", "section", "target")
_FUNCTION_KEY = re.compile(r"([A-Za-z_]\w*)\(\s*([A-Za-z_]\w*(?:\s*,\s*[A-Za-z_]\w*)*)?\s*\)$")


@dataclass
class Entry:
    key: str
    value: str
    quoted: bool
    line: int
    column: int


class Document:
    """Parsed sections of one file, with positions for diagnostics."""

    def __init__(self, path: Optional[str], sections: Dict[str, Dict[str, Entry]]):
        self.path = path
        self.sections = sections

    def section(self, name: str) -> Dict[str, Entry]:
        return self.sections.get(name, {})

    def error(self, message: str, entry: Optional[Entry] = None, offset: int = 0) -> LoadError:
        if entry is None:
            return LoadError(message, self.path)
        return LoadError(message, self.path, entry.line, entry.column + offset)


def read_document(text: str, path: Optional[str], allowed: Sequence[str]) -> Document:
    sections: Dict[str, Dict[str, Entry]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise LoadError("unterminated section header", path, lineno, 1)
            current = stripped[1:-1].strip()
            if current not in allowed:
                raise LoadError(f"unknown section [{current}]", path, lineno, 2)
            if current in sections:
                raise LoadError(f"duplicate section [{current}]", path, lineno, 2)
            sections[current] = {}
            continue
        if current is None:
            raise LoadError("entry outside of a section", path, lineno, 1)
        key, sep, value = raw.partition("=")
        if not sep:
            raise LoadError("expected key = value", path, lineno, len(raw) - len(raw.lstrip()) + 1)
        key = key.strip()
        column = len(raw) - len(value.lstrip()) + 1
        value = value.strip()
        quoted = len(value) >= 2 and value[0] == value[-1] == '"'
        if value.startswith('"') and not quoted:
            raise LoadError("unterminated string", path, lineno, column)
        if quoted:
            value = value[1:-1]
            column += 1
        elif "#" in value:
            value = value.split("#", 1)[0].rstrip()
        if key in sections[current]:
            raise LoadError(f"duplicate key {key!r} in [{current}]", path, lineno, 1)
        sections[current][key] = Entry(key, value, quoted, lineno, column)
    return Document(path, sections)


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise LoadError(f"cannot read file: {e.strerror}", path)


def _expr(doc: Document, entry: Entry, ctx: VariableContext) -> sp.Expr:
    try:
        return ctx.bind_params(parse(entry.value, ctx))
    except ParseError as e:
        offset = e.position or 0
        message = str(e).split(" at position")[0]
        raise doc.error(message, entry, offset)


def _bool(doc: Document, entry: Entry) -> bool:
    value = entry.value.lower()
    if value in ("true", "yes", "1"):
        return True
    if value in ("false", "no", "0"):
        return False
    raise doc.error(f"expected true or false, got {entry.value!r}", entry)


def _float(doc: Document, entry: Entry) -> float:
    try:
        return float(sp.sympify(entry.value.replace("^", "**")).evalf())
    except (sp.SympifyError, TypeError, ValueError):
        raise doc.error(f"expected a number, got {entry.value!r}", entry)


def _int(doc: Document, entry: Entry, low: int = 0) -> int:
    try:
        value = int(entry.value)
    except ValueError:
        raise doc.error(f"expected an integer, got {entry.value!r}", entry)
    if value < low:
        raise doc.error(f"expected an integer >= {low}, got {value}", entry)
    return value


def _axis(doc: Document, entries: Dict[str, Entry], names: Sequence[str]):
    """Axis of a variable from <name>_interval or <name>_mod under any alias."""
    found = []
    for name in dict.fromkeys(names):
        for suffix in ("interval", "mod"):
            entry = entries.get(f"{name}_{suffix}")
            if entry is not None:
                found.append((suffix, entry))
    if len(found) > 1:
        raise doc.error(f"conflicting domain entries for {names[0]}", found[1][1])
    if not found:
        return Interval()
    suffix, entry = found[0]
    try:
        return parse_interval(entry.value) if suffix == "interval" else parse_modulus(entry.value)
    except DomainError as e:
        raise doc.error(str(e), entry)


def _positive(axis) -> bool:
    return isinstance(axis, Interval) and axis.lo >= 0


def _declare_params(doc: Document, ctx: VariableContext):
    for key, entry in doc.section("params").items():
        try:
            ctx.declare_param(key, _float(doc, entry))
        except ParseError as e:
            raise doc.error(str(e), entry)


def _declare_functions(doc: Document, ctx: VariableContext):
    for key, entry in doc.section("functions").items():
        match = _FUNCTION_KEY.match(key)
        if not match:
            raise doc.error(f"expected a function head like H(u), got {key!r}", entry)
        name, args = match.group(1), match.group(2)
        arg_names = [a.strip() for a in args.split(",")] if args else []
        local = VariableContext()
        local.functions = dict(ctx.functions)
        for param, value in ctx.params.items():
            if param not in arg_names:
                local.declare_param(param, value)
        symbols = [local.declare(a, VarRole.AUX).symbol for a in arg_names]
        body = _expr(doc, entry, local)
        try:
            ctx.declare_function(defined_function(name, symbols, body))
        except ParseError as e:
            raise doc.error(str(e), entry)


def _base_names(n: int, letter: str = "x") -> List[str]:
    return [letter] if n == 1 else [f"{letter}{k + 1}" for k in range(n)]


def _names(doc: Document, n: int) -> List[str]:
    entry = doc.section("vars").get("names")
    if entry is None:
        return ["t", *_base_names(n), "u"]
    names = [s.strip() for s in entry.value.split(",")]
    if len(names) != n + 2 or len(set(names)) != len(names):
        raise doc.error(f"names must list {n + 2} distinct variables (t, x..., u)", entry)
    return names


def _symmetric(doc: Document, entries: Dict[str, Entry], prefix: str, n: int,
               ctx: VariableContext, default: sp.Expr = sp.S.Zero) -> sp.Matrix:
    matrix = sp.zeros(n, n)
    for i, j in index_pairs(n):
        upper = entries.get(f"{prefix}.{i + 1}.{j + 1}")
        lower = entries.get(f"{prefix}.{j + 1}.{i + 1}") if i != j else None
        value = _expr(doc, upper, ctx) if upper is not None else None
        if lower is not None:
            other = _expr(doc, lower, ctx)
            if value is not None and tidy(value - other) != 0:
                raise doc.error(f"{prefix}.{i + 1}.{j + 1} and {prefix}.{j + 1}.{i + 1} differ", lower)
            value = other
        if value is None:
            value = default
        matrix[i, j] = matrix[j, i] = value
    return matrix


def _vector(doc: Document, entries: Dict[str, Entry], prefix: str, n: int, ctx: VariableContext) -> List[sp.Expr]:
    return [_expr(doc, entries[f"{prefix}.{k + 1}"], ctx) if f"{prefix}.{k + 1}" in entries else sp.S.Zero
            for k in range(n)]


def _check_keys(doc: Document, section: str, allowed: re.Pattern):
    for key, entry in doc.section(section).items():
        if not allowed.fullmatch(key):
            raise doc.error(f"unknown key {key!r} in [{section}]", entry)


def load_equation_text(text: str, path: Optional[str] = None,
                       expand: bool = True) -> Union[ParabolicEquation, GeometricEquation]:
    doc = read_document(text, path, EQUATION_SECTIONS)
    has_coeffs, has_geometry = "coeffs" in doc.sections, "geometry" in doc.sections
    if has_coeffs and has_geometry:
        raise doc.error("an equation has either [coeffs] or [geometry], not both")
    if not (has_coeffs or has_geometry):
        raise doc.error("missing [coeffs] or [geometry] section")

    meta, var_entries = doc.section("meta"), doc.section("vars")
    if "n" not in var_entries:
        raise doc.error("[vars] must declare n")
    n = _int(doc, var_entries["n"], low=1)
    names = _names(doc, n)
    axes = [_axis(doc, var_entries, [names[0]])]
    for k in range(n):
        axes.append(_axis(doc, var_entries, [names[k + 1], f"x{k + 1}"]))
    axes.append(_axis(doc, var_entries, [names[-1], "omega"]))

    ctx = VariableContext()
    _declare_params(doc, ctx)
    try:
        t = ctx.declare(names[0], VarRole.TIME, positive=_positive(axes[0]))
        xs = [ctx.declare(names[k + 1], VarRole.BASE, index=k + 1, positive=_positive(axes[k + 1]))
              for k in range(n)]
        u = ctx.declare(names[-1], VarRole.FIBER, positive=_positive(axes[-1]))
    except ParseError as e:
        raise doc.error(str(e), var_entries.get("names"))
    _declare_functions(doc, ctx)

    predicates = [_expr(doc, entry, ctx) for key, entry in sorted(var_entries.items())
                  if key.startswith("predicate")]
    dom = Domain({name: axis for name, axis in zip(names, axes)}, predicates)
    name = meta["name"].value if "name" in meta else _stem(path)
    compact = _bool(doc, meta["compact"]) if "compact" in meta else False
    u0 = _float(doc, meta["u0"]) if "u0" in meta else None
    if u0 is not None and not axes[-1].contains(u0):
        raise doc.error(f"u0 = {u0} is outside {axes[-1]}", meta["u0"])

    if has_coeffs:
        _check_keys(doc, "coeffs", re.compile(r"[bc]\.\d+\.\d+|b\.\d+|q"))
        entries = doc.section("coeffs")
        _check_indices(doc, entries, n)
        eq = ParabolicEquation(
            name=name, context=ctx, t=t, xs=xs, u=u, dom=dom,
            b=_symmetric(doc, entries, "b", n, ctx), c=_symmetric(doc, entries, "c", n, ctx),
            bvec=_vector(doc, entries, "b", n, ctx),
            q=_expr(doc, entries["q"], ctx) if "q" in entries else sp.S.Zero,
            compact=compact, u0=u0,
        )
        logger.info(f"loaded equation {name} ({n}D) from {path or '<text>'}")
        return eq

    _check_keys(doc, "geometry", re.compile(r"g\.\d+\.\d+|a|eta\.\d+|xi\.\d+|q"))
    entries = doc.section("geometry")
    _check_indices(doc, entries, n)
    geq = GeometricEquation(
        name=name, context=ctx, t=t, xs=xs, u=u, dom=dom,
        g=_symmetric(doc, entries, "g", n, ctx),
        a=_expr(doc, entries["a"], ctx) if "a" in entries else sp.S.One,
        eta=_vector(doc, entries, "eta", n, ctx), xi=_vector(doc, entries, "xi", n, ctx),
        q=_expr(doc, entries["q"], ctx) if "q" in entries else sp.S.Zero,
        compact=compact, u0=u0,
    )
    logger.info(f"loaded geometric equation {name} ({n}D) from {path or '<text>'}")
    return expand_geometry(geq) if expand else geq


def _check_indices(doc: Document, entries: Dict[str, Entry], n: int):
    for key, entry in entries.items():
        indices = [int(k) for k in key.split(".")[1:]]
        if any(k < 1 or k > n for k in indices):
            raise doc.error(f"index out of range in {key!r} (n = {n})", entry)


def _stem(path: Optional[str]) -> str:
    if not path:
        return "equation"
    return os.path.splitext(os.path.basename(path))[0]


def load_equation(path: str, expand: bool = True) -> Union[ParabolicEquation, GeometricEquation]:
    return load_equation_text(_read(path), path, expand)


def load_map_text(text: str, path: Optional[str] = None) -> FiberedMap:
    doc = read_document(text, path, MAP_SECTIONS)
    entries = doc.section("map")
    if "map" not in doc.sections:
        raise doc.error("missing [map] section")
    _check_keys(doc, "map", re.compile(r"tau|y(\.\d+)?|v"))
    if "y" in entries and "y.1" in entries:
        raise doc.error("use either y or y.1", entries["y.1"])
    if "y" in entries:
        entries = dict(entries)
        entries["y.1"] = entries.pop("y")
    m = len([k for k in entries if k.startswith("y.")])
    for k in range(m):
        if f"y.{k + 1}" not in entries:
            raise doc.error(f"y components must be numbered 1..{m}; y.{k + 1} is missing")
    for key in ("tau", "v"):
        if key not in entries:
            raise doc.error(f"[map] must define {key}")

    var_entries = doc.section("vars")
    n = _int(doc, var_entries["n"], low=max(m, 1)) if "n" in var_entries else max(m, 1)
    ctx = VariableContext()
    _declare_params(doc, ctx)
    try:
        source = [ctx.declare("t", VarRole.TIME).symbol,
                  *[ctx.declare(x, VarRole.BASE, index=k + 1).symbol for k, x in enumerate(_base_names(n))],
                  ctx.declare("u", VarRole.FIBER).symbol]
        target = [ctx.declare("tau", VarRole.QTIME).symbol,
                  *[ctx.declare(y, VarRole.QBASE, index=k + 1).symbol for k, y in enumerate(_base_names(m, "y"))],
                  ctx.declare("v", VarRole.QFIBER).symbol]
    except ParseError as e:
        raise doc.error(f"{e}; parameter names must differ from map variables")
    _declare_functions(doc, ctx)

    tau = _expr(doc, entries["tau"], ctx)
    ys = [_expr(doc, entries[f"y.{k + 1}"], ctx) for k in range(m)]
    v = _expr(doc, entries["v"], ctx)

    section = None
    if "section" in doc.sections:
        sec = dict(doc.section("section"))
        _check_keys(doc, "section", re.compile(r"t|x(\.\d+)?|u"))
        if "x" in sec:
            sec["x.1"] = sec.pop("x")
        keys = ["t", *[f"x.{k + 1}" for k in range(n)], "u"]
        missing = [k for k in keys if k not in sec]
        if missing:
            raise doc.error(f"[section] is missing {', '.join(missing)}")
        section = [_expr(doc, sec[k], ctx) for k in keys]

    target_axes = {}
    target_names = [s.name for s in target]
    aliases = {name: name for name in target_names}
    for k, name in enumerate(target_names[1:-1]):
        aliases[f"y{k + 1}"] = aliases[f"y.{k + 1}"] = name
    for key, entry in doc.section("target").items():
        name, _, kind = key.rpartition("_")
        name = aliases.get(name)
        if name is None or kind not in ("interval", "mod"):
            raise doc.error(f"unknown key {key!r} in [target]", entry)
        try:
            target_axes[name] = parse_interval(entry.value) if kind == "interval" else parse_modulus(entry.value)
        except DomainError as e:
            raise doc.error(str(e), entry)

    meta = doc.section("meta")
    shape = None
    if "shape" in meta:
        try:
            shape = MapShape(meta["shape"].value)
        except ValueError:
            allowed = ", ".join(s.value for s in MapShape)
            raise doc.error(f"unknown shape {meta['shape'].value!r} (one of {allowed})", meta["shape"])
    name = meta["name"].value if "name" in meta else _stem(path)
    try:
        fmap = FiberedMap(name=name, source=source, target=target, tau=tau, ys=ys, v=v, section=section,
                          target_axes=target_axes, declared_shape=shape, context=ctx)
    except InputError as e:
        raise doc.error(str(e))
    logger.info(f"loaded map {name} {fmap} from {path or '<text>'}")
    return fmap


def load_map(path: str) -> FiberedMap:
    return load_map_text(_read(path), path)


# Saving

def _savable(exprs: Sequence[sp.Expr]) -> Dict[str, object]:
    """Defined functions used by the expressions; numeric constructions cannot be written out."""
    specs = {}
    for expr in exprs:
        for node in opaque_nodes(expr):
            spec = node._spec
            if getattr(spec, "body", None) is None:
                raise InputError(f"{spec.name} is a numeric construction ({spec.description}) "
                                 f"and cannot be saved to a file")
            specs[spec.name] = spec
    return specs


def _axis_text(axis) -> str:
    if isinstance(axis, Periodic):
        return str(axis).split(" ", 1)[1]
    return str(axis)


def _axis_key(name: str, axis) -> str:
    return f"{name}_{'mod' if isinstance(axis, Periodic) else 'interval'}"


def _function_lines(specs: Dict[str, object]) -> List[str]:
    lines = ["", "[functions]"]
    for name in sorted(specs):
        spec = specs[name]
        head = f"{name}({', '.join(p.name for p in spec.params)})"
        lines.append(f'{head} = "{to_text(spec.body)}"')
    return lines


def save_equation_text(eq: ParabolicEquation) -> str:
    coeffs = eq.coefficients()
    specs = _savable([*coeffs.values(), *eq.dom.predicates])
    lines = ["[meta]", f"name = {eq.name}", f"compact = {'true' if eq.compact else 'false'}"]
    if eq.u0 is not None:
        lines.append(f"u0 = {eq.u0!r}")
    lines += ["", "[vars]", f"n = {eq.n}", f"names = {', '.join(eq.names)}"]
    for name in eq.names:
        axis = eq.dom.axis(name)
        lines.append(f"{_axis_key(name, axis)} = {_axis_text(axis)}")
    for k, pred in enumerate(eq.dom.predicates):
        lines.append(f'predicate.{k + 1} = "{to_text(pred)}"')
    if specs:
        lines += _function_lines(specs)
    lines += ["", "[coeffs]"]
    for key, expr in coeffs.items():
        lines.append(f'{key} = "{to_text(expr)}"')
    return "\n".join(lines) + "\n"


def save_equation(eq: ParabolicEquation, path: str):
    text = save_equation_text(eq)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    logger.info(f"saved equation {eq.name} to {path}")


def save_map_text(fmap: FiberedMap) -> str:
    exprs = [*fmap.components, *(fmap.section or [])]
    specs = _savable(exprs)
    lines = ["[meta]", f"name = {fmap.name}"]
    if fmap.declared_shape is not None:
        lines.append(f"shape = {fmap.declared_shape.value}")
    lines += ["", "[vars]", f"n = {fmap.n}"]
    if specs:
        lines += _function_lines(specs)
    # canonical file names, matched by position
    source = ["t", *_base_names(fmap.n), "u"]
    target = ["tau", *_base_names(fmap.m, "y"), "v"]
    s_map = {s: sp.Symbol(n, real=True) for s, n in zip(fmap.source, source)}
    t_map = {s: sp.Symbol(n, real=True) for s, n in zip(fmap.target, target)}
    lines += ["", "[map]", f'tau = "{to_text(fmap.tau.xreplace(s_map))}"']
    for k, y in enumerate(fmap.ys):
        lines.append(f'y.{k + 1} = "{to_text(y.xreplace(s_map))}"')
    lines.append(f'v = "{to_text(fmap.v.xreplace(s_map))}"')
    if fmap.section is not None:
        lines += ["", "[section]", f't = "{to_text(fmap.section[0].xreplace(t_map))}"']
        for k, x in enumerate(fmap.section[1:-1]):
            lines.append(f'x.{k + 1} = "{to_text(x.xreplace(t_map))}"')
        lines.append(f'u = "{to_text(fmap.section[-1].xreplace(t_map))}"')
    if fmap.target_axes:
        lines += ["", "[target]"]
        for sym, name in zip(fmap.target, target):
            axis = fmap.target_axes.get(sym.name)
            if axis is not None:
                lines.append(f"{_axis_key(name, axis)} = {_axis_text(axis)}")
    return "\n".join(lines) + "\n"


def save_map(fmap: FiberedMap, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(save_map_text(fmap))
    logger.info(f"saved map {fmap.name} to {path}")


# Lattice dataset

_ARROW = re.compile(r"(?P<src>\S+)\s*->\s*(?P<dst>\S+)$")
_INTERSECTION = re.compile(r"(?P<node>\S+)\s*=\s*(?P<left>\S+)\s*&\s*(?P<right>\S+)$")
_COINCIDENCE = re.compile(r"(?P<left>\S+)\s*==\s*(?P<right>\S+)$")


def _guard(path: Optional[str], lineno: int, fields: List[str], index: int) -> Optional[str]:
    if len(fields) <= index:
        return None
    text = fields[index].strip()
    if not text.startswith("if "):
        raise LoadError("expected 'if <guard>'", path, lineno)
    guards = [g.strip() for g in text[3:].split(",")]
    for g in guards:
        if g not in ("nonexc", "nonext", "nonconst"):
            raise LoadError(f"unknown guard {g!r}", path, lineno)
    return ",".join(guards)


def _kinds(path: Optional[str], lineno: int, text: str) -> frozenset:
    text = text.strip()
    if text == "-":
        return frozenset()
    kinds = set()
    for part in text.split(","):
        try:
            kinds.add(ArrowKind(part.strip()))
        except ValueError:
            allowed = ", ".join(k.value for k in ArrowKind)
            raise LoadError(f"unknown arrow kind {part.strip()!r} (one of {allowed})", path, lineno)
    return frozenset(kinds)


def parse_lattice_line(line: str, path: Optional[str] = None, lineno: int = 1, user: bool = False):
    """One dataset record: an arrow, an intersection or a coincidence."""
    fields = [f.strip() for f in line.split(":")]
    head = fields[0]
    arrow = _ARROW.match(head)
    if arrow:
        if len(fields) not in (3, 4):
            raise LoadError("expected 'src -> dst : kinds : provenance [: if guard]'", path, lineno)
        return LatticeArrow(src=arrow["src"], dst=arrow["dst"], kinds=_kinds(path, lineno, fields[1]),
                            provenance=fields[2], guard=_guard(path, lineno, fields, 3), user=user)
    coincidence = _COINCIDENCE.match(head)
    if coincidence:
        if len(fields) not in (2, 3):
            raise LoadError("expected 'A == B : provenance [: if guard]'", path, lineno)
        return LatticeCoincidence(left=coincidence["left"], right=coincidence["right"], provenance=fields[1],
                                  guard=_guard(path, lineno, fields, 2), user=user)
    inter = _INTERSECTION.match(head)
    if inter:
        if len(fields) not in (2, 3):
            raise LoadError("expected 'N = A & B : provenance [: if guard]'", path, lineno)
        return LatticeIntersection(node=inter["node"], left=inter["left"], right=inter["right"],
                                   provenance=fields[1], guard=_guard(path, lineno, fields, 2), user=user)
    raise LoadError(f"unrecognized record {head!r}", path, lineno, 1)


def load_lattice_text(text: str, path: Optional[str] = None, user: bool = False) -> Lattice:
    arrows, intersections, coincidences = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        record = parse_lattice_line(line, path, lineno, user)
        if isinstance(record, LatticeArrow):
            arrows.append(record)
        elif isinstance(record, LatticeIntersection):
            intersections.append(record)
        else:
            coincidences.append(record)
    return Lattice(arrows, intersections, coincidences)


def load_lattice(path: str) -> Lattice:
    return load_lattice_text(_read(path), path)
