"""
DSL Frontend
Parses .mdfg programs (requires, bindings, outputs), checks scoping and
lowers them into an Mdfg plus the declared timing constraints.
"""

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedInput, UnexpectedToken, VisitError

from errors import InputFileError, LoweringError, MdfgSyntaxError
from mdfg import EdgePolicy, EdgeSpec, Mdfg, NodeKind, NodeSpec, PolicyKind

logger = logging.getLogger(__name__)

GRAMMAR_FILE = Path(__file__).with_name("mdfg.lark")

FREQUENCY_KEY = "frequency"
FREQUENCY_UNITS = {"hz": "Hz", "fps": "Hz"}
DEFAULT_SENSOR_RATE_HZ = 10.0
RESOLUTION_CHANNELS = 3

NUMBER = re.compile(r"-?\d+(?:\.\d+)?")
NUMBER_WITH_UNIT = re.compile(r"(-?\d+(?:\.\d+)?)([A-Za-z]+)")
RESOLUTION = re.compile(r"(\d+)[xX](\d+)")

TERMINAL_DISPLAY = {
    "NAME": "identifier",
    "VALUE": "value",
    "UNIT": "unit",
    "INT": "integer",
    "$END": "end of input",
}


@dataclass(frozen=True)
class Constraint:
    key: str
    relation: str
    value: object
    unit: Optional[str] = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def number(self) -> float:
        if isinstance(self.value, (int, float)):
            return float(self.value)
        raise LoweringError(f"constraint '{self.key}' needs a numeric value, got '{self.value}'")


@dataclass(frozen=True)
class RequireDecl:
    name: str
    kind: NodeKind
    constraints: tuple = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    @property
    def frequency(self) -> Optional[Constraint]:
        for constraint in self.constraints:
            if constraint.key == FREQUENCY_KEY:
                return constraint
        return None


@dataclass(frozen=True)
class BindingDecl:
    name: str
    function: str
    args: tuple = ()
    policies: tuple = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def policy_for(self, index: int) -> EdgePolicy:
        if index < len(self.policies):
            return self.policies[index]
        return EdgePolicy.latest()


@dataclass(frozen=True)
class Program:
    requires: tuple = ()
    bindings: tuple = ()
    outputs: tuple = ()


@dataclass(frozen=True)
class ConstraintSet:
    """Every constraint of the source, grouped by the node that declared it."""

    by_node: dict = field(default_factory=dict)

    def for_node(self, name: str) -> tuple:
        return self.by_node.get(name, ())

    def frequency(self, name: str) -> Optional[Constraint]:
        for constraint in self.for_node(name):
            if constraint.key == FREQUENCY_KEY:
                return constraint
        return None

    def __len__(self) -> int:
        return sum(len(constraints) for constraints in self.by_node.values())

    def __iter__(self):
        for name, constraints in self.by_node.items():
            for constraint in constraints:
                yield name, constraint


def _present(children) -> list:
    return [child for child in children if child is not None]


def _coerce_value(raw: str):
    if NUMBER.fullmatch(raw):
        return float(raw) if "." in raw else int(raw)
    return raw


class ProgramTransformer(Transformer):
    """Turns the lark tree into AST records; scope rules are checked afterwards."""

    @v_args(inline=True)
    def require(self, name: Token, kind: Token, constraints=None):
        try:
            node_kind = NodeKind(kind.value.lower())
        except ValueError:
            raise MdfgSyntaxError(
                f"unknown kind '{kind.value}' (expected sensor, compute or actuator)",
                kind.line, kind.column, "unknown-kind") from None
        return RequireDecl(name.value, node_kind, tuple(constraints or ()), name.line, name.column)

    def constraints(self, children):
        return _present(children)

    @v_args(inline=True)
    def constraint(self, key: Token, relation: str, value: Token, unit: Optional[Token] = None):
        raw = value.value
        unit_text = unit.value if unit is not None else None
        if unit_text is None:
            split = NUMBER_WITH_UNIT.fullmatch(raw)
            if split and split.group(2).lower() in FREQUENCY_UNITS:
                raw, unit_text = split.group(1), split.group(2)
        parsed = _coerce_value(raw)
        if key.value == FREQUENCY_KEY:
            if unit_text is not None and unit_text.lower() not in FREQUENCY_UNITS:
                raise MdfgSyntaxError(f"unknown frequency unit '{unit_text}'",
                                      key.line, key.column, "syntax")
            if not isinstance(parsed, (int, float)):
                raise MdfgSyntaxError(f"frequency must be a number, got '{raw}'",
                                      value.line, value.column, "syntax")
            unit_text = "Hz"
        return Constraint(key.value, relation, parsed, unit_text, key.line, key.column)

    def relation(self, children):
        return children[0].value

    @v_args(inline=True)
    def binding(self, name: Token, function: Token, args: list, policies=None):
        return {
            "name": name,
            "function": function,
            "args": list(args),
            "policies": list(policies or ()),
        }

    def args(self, children):
        return list(children)

    def policies(self, children):
        return list(children)

    @v_args(inline=True)
    def policy(self, name: Token, size: Optional[Token] = None):
        kind = name.value.lower()
        if kind == PolicyKind.WINDOW.value:
            if size is None:
                raise MdfgSyntaxError("window policy needs a size, e.g. window(3)",
                                      name.line, name.column, "syntax")
            if int(size) < 1:
                raise MdfgSyntaxError("window size must be at least 1",
                                      size.line, size.column, "syntax")
            return EdgePolicy.window(int(size))
        if kind in (PolicyKind.LATEST.value, PolicyKind.FIFO.value):
            if size is not None:
                raise MdfgSyntaxError(f"policy '{kind}' takes no argument",
                                      size.line, size.column, "syntax")
            return EdgePolicy(PolicyKind(kind))
        raise MdfgSyntaxError(f"unknown policy '{name.value}' (expected latest, window(k) or fifo)",
                              name.line, name.column, "syntax")

    def output(self, children):
        return ("output", list(children))

    def start(self, children):
        return children


@lru_cache(maxsize=1)
def _parser() -> Lark:
    return Lark(GRAMMAR_FILE.read_text(encoding="utf-8"), parser="lalr",
                lexer="contextual", propagate_positions=True)


def _describe_terminal(parser: Lark, name: str) -> str:
    if name in TERMINAL_DISPLAY:
        return TERMINAL_DISPLAY[name]
    try:
        pattern = parser.get_terminal(name).pattern
    except KeyError:
        return name.lower()
    if pattern.type == "str":
        return f"'{pattern.value}'"
    return name.lower()


def _syntax_error(parser: Lark, exc: UnexpectedInput) -> MdfgSyntaxError:
    line = getattr(exc, "line", 1) or 1
    column = getattr(exc, "column", 1) or 1
    if isinstance(exc, UnexpectedCharacters):
        return MdfgSyntaxError(f"unexpected character {exc.char!r}", line, column, "lexical")
    if isinstance(exc, UnexpectedToken):
        expected = sorted({_describe_terminal(parser, name) for name in exc.expected})
        wanted = expected[0] if len(expected) == 1 else "one of " + ", ".join(expected)
        if exc.token.type == "$END":
            return MdfgSyntaxError(f"unexpected end of input, expected {wanted}", line, column)
        return MdfgSyntaxError(f"unexpected '{exc.token.value}', expected {wanted}", line, column)
    return MdfgSyntaxError(str(exc).splitlines()[0], line, column)


def _check_scope(items: list) -> Program:
    requires = []
    bindings = []
    outputs = []
    kinds = {}
    declared = set()

    def claim(token_or_name, line, column):
        if token_or_name in declared:
            raise MdfgSyntaxError(f"duplicate name '{token_or_name}'", line, column, "duplicate-name")
        declared.add(token_or_name)

    for item in items:
        if isinstance(item, RequireDecl):
            claim(item.name, item.line, item.column)
            frequencies = [c for c in item.constraints if c.key == FREQUENCY_KEY]
            if len(frequencies) > 1:
                extra = frequencies[1]
                raise MdfgSyntaxError(f"'{item.name}' declares more than one frequency constraint",
                                      extra.line, extra.column, "constraint")
            if frequencies and frequencies[0].value <= 0:
                raise MdfgSyntaxError(f"frequency of '{item.name}' must be positive",
                                      frequencies[0].line, frequencies[0].column, "constraint")
            kinds[item.name] = item.kind
            requires.append(item)
        elif isinstance(item, tuple):
            outputs.extend(item[1])
        else:
            name, function = item["name"], item["function"]
            if function.value not in kinds:
                raise MdfgSyntaxError(f"forward reference to '{function.value}'",
                                      function.line, function.column, "forward-reference")
            if kinds[function.value] is NodeKind.SENSOR:
                raise MdfgSyntaxError(f"sensor '{function.value}' cannot be applied",
                                      function.line, function.column, "scope")
            for arg in item["args"]:
                if arg.value not in declared:
                    raise MdfgSyntaxError(f"forward reference to '{arg.value}'",
                                          arg.line, arg.column, "forward-reference")
            if len(item["policies"]) > len(item["args"]):
                raise MdfgSyntaxError(
                    f"'{name.value}' lists {len(item['policies'])} policies for "
                    f"{len(item['args'])} arguments", name.line, name.column, "syntax")
            claim(name.value, name.line, name.column)
            bindings.append(BindingDecl(name.value, function.value,
                                        tuple(arg.value for arg in item["args"]),
                                        tuple(item["policies"]), name.line, name.column))

    for output in outputs:
        if output.value not in declared:
            raise MdfgSyntaxError(f"unknown output '{output.value}'",
                                  output.line, output.column, "forward-reference")

    return Program(tuple(requires), tuple(bindings), tuple(output.value for output in outputs))


def parse(text: str) -> Program:
    """Parse program text into an AST.

    Raises:
        MdfgSyntaxError: lexical, syntax or scope problem, with its position.
    """
    parser = _parser()
    try:
        tree = parser.parse(text)
        items = ProgramTransformer().transform(tree)
    except UnexpectedInput as exc:
        raise _syntax_error(parser, exc) from None
    except VisitError as exc:
        if isinstance(exc.orig_exc, MdfgSyntaxError):
            raise exc.orig_exc from None
        raise
    return _check_scope(items)


def parse_file(path) -> Program:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise InputFileError(f"cannot read {path}: {e}") from e
    return parse(text)


def _format_value(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    if isinstance(value, float):
        return np.format_float_positional(value, trim="-")
    return str(value)


def _format_constraint(constraint: Constraint) -> str:
    text = f"{constraint.key} {constraint.relation} {_format_value(constraint.value)}"
    if constraint.unit:
        text += f" {constraint.unit}"
    return text


def pretty_print(program: Program) -> str:
    """Canonical text: requires, then bindings, then one output line."""
    if not program.requires:
        raise ValueError("a program needs at least one require declaration")
    lines = []
    for require in program.requires:
        line = f"require {require.name} {require.kind.value}"
        if require.constraints:
            line += " { " + ", ".join(_format_constraint(c) for c in require.constraints) + " }"
        lines.append(line)
    for binding in program.bindings:
        line = f"{binding.name} = {binding.function}({', '.join(binding.args)})"
        if binding.policies:
            line += " @ " + ", ".join(str(policy) for policy in binding.policies)
        lines.append(line)
    if program.outputs:
        lines.append("output " + ", ".join(program.outputs))
    return "\n".join(lines) + "\n"


def _token_bytes(require: RequireDecl) -> int:
    if require.kind is NodeKind.ACTUATOR:
        return 0
    for constraint in require.constraints:
        if constraint.key == "token_bytes":
            return int(constraint.number())
    for constraint in require.constraints:
        if constraint.key == "resolution":
            match = RESOLUTION.fullmatch(str(constraint.value))
            if not match:
                raise LoweringError(f"resolution of '{require.name}' must look like 320x240")
            return int(match.group(1)) * int(match.group(2)) * RESOLUTION_CHANNELS
    return 0


def lower(program: Program) -> tuple:
    """Turn a checked program into (Mdfg, ConstraintSet).

    One node per require, one edge per binding argument. A node bound twice with
    the same inputs is an alias of the first binding.

    Raises:
        LoweringError: arity mismatch, conflicting inputs or an argument that is
            neither a sensor nor a prior binding.
    """
    requires = {require.name: require for require in program.requires}
    resolved = {}
    inputs = {}
    policies = {}

    for binding in program.bindings:
        sources = []
        for arg in binding.args:
            if arg in resolved:
                sources.append(resolved[arg])
            elif arg in requires and requires[arg].kind is NodeKind.SENSOR:
                sources.append(arg)
            else:
                raise LoweringError(f"argument '{arg}' of '{binding.name}' must be a sensor "
                                    f"or a prior binding")
        function = binding.function
        if function in inputs:
            if len(inputs[function]) != len(sources):
                raise LoweringError(f"arity mismatch: '{function}' bound with "
                                    f"{len(inputs[function])} and {len(sources)} arguments")
            if inputs[function] != sources:
                raise LoweringError(f"conflicting inputs for '{function}' in '{binding.name}'")
            logger.debug(f"Binding {binding.name} aliases {function}")
        else:
            inputs[function] = sources
            policies[function] = [binding.policy_for(i) for i in range(len(sources))]
        resolved[binding.name] = function

    rates = {}
    for require in program.requires:
        if require.frequency is not None:
            rates[require.name] = require.frequency.number()
    for binding in program.bindings:
        function = binding.function
        if function not in rates:
            producer_rates = [rates.get(source, DEFAULT_SENSOR_RATE_HZ)
                              for source in inputs[function]]
            rates[function] = max(producer_rates, default=DEFAULT_SENSOR_RATE_HZ)

    nodes = []
    edges = []
    for require in program.requires:
        sources = inputs.get(require.name, [])
        ports = tuple(f"in{i}" for i in range(len(sources)))
        attrs = {c.key: _format_value(c.value) for c in require.constraints
                 if c.key not in (FREQUENCY_KEY, "token_bytes")}
        nodes.append(NodeSpec(require.name, require.kind,
                              rates.get(require.name, DEFAULT_SENSOR_RATE_HZ),
                              _token_bytes(require), ports, attrs))
        for port, source, policy in zip(ports, sources, policies.get(require.name, [])):
            edges.append(EdgeSpec(source, require.name, port, policy))

    graph = Mdfg.build(nodes, edges)
    outputs = [resolved.get(name, name) for name in program.outputs] or graph.sinks()
    graph = Mdfg(graph.nodes, graph.edges, tuple(dict.fromkeys(outputs)))

    constraint_set = ConstraintSet({require.name: require.constraints
                                    for require in program.requires})
    logger.info(f"Lowered program: {len(graph.nodes)} nodes, {len(graph.edges)} edges, "
                f"{len(constraint_set)} constraints")
    return graph, constraint_set


def compile_file(path) -> tuple:
    """parse_file + lower; returns (program, graph, constraints)."""
    program = parse_file(path)
    graph, constraints = lower(program)
    return program, graph, constraints
