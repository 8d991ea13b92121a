"""Propositional STRIPS subset of PDDL: parsing, state algebra and planning.

States are closed-world: a ``frozenset`` of the propositions that hold.
Everything absent is false.  Action schemas carry literal sets for their
preconditions and effects; positive effects form the add list and negative
effects the delete list.

Grammar accepted (s-expressions, ``;`` comments)::

    (define (domain NAME)
      (:requirements ...)                      ; optional, ignored
      (:predicates (p1) (p2) ...)
      (:action NAME
        :parameters ()                         ; optional, must be empty
        :precondition (and L ...)
        :effect (and L ...)))

    (define (problem NAME)
      (:domain NAME)
      (:init (p) ...)
      (:goal (and L ...)))

where ``L`` is ``(p)`` or ``(not (p))``.  A single literal may stand in for a
one-element ``and``.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

__all__ = [
    "PDDLError",
    "PDDLSyntaxError",
    "SemanticError",
    "PreconditionViolation",
    "UnknownAction",
    "Literal",
    "ActionSchema",
    "Domain",
    "Problem",
    "parse_domain",
    "parse_problem",
    "satisfies",
    "apply",
    "plan",
    "validate_plan",
    "load_disassembly_domain",
    "load_disassembly_problem",
]

PROPOSITION_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_\-]*\Z")


class PDDLError(Exception):
    """Base class for everything raised by this module."""


class PDDLSyntaxError(PDDLError):
    def __init__(self, message: str, line: int, column: int, expected: str | None = None):
        self.line = line
        self.column = column
        self.expected = expected
        where = f"line {line}, column {column}"
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at {where}{detail}")


class SemanticError(PDDLError):
    pass


class PreconditionViolation(PDDLError):
    pass


class UnknownAction(PDDLError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


def check_proposition(name: str) -> str:
    if not isinstance(name, str) or not PROPOSITION_RE.match(name):
        raise SemanticError(f"invalid proposition name {name!r}")
    return name


@dataclass(frozen=True, order=True)
class Literal:
    prop: str
    positive: bool = True

    def __post_init__(self) -> None:
        check_proposition(self.prop)

    def __invert__(self) -> "Literal":
        return Literal(self.prop, not self.positive)

    def holds(self, state: frozenset[str]) -> bool:
        return (self.prop in state) == self.positive

    def __str__(self) -> str:
        return f"({self.prop})" if self.positive else f"(not ({self.prop}))"

    @classmethod
    def parse(cls, text: str) -> "Literal":
        """Shorthand used in tests and configs: ``"p"`` or ``"!p"`` / ``"not p"``."""
        text = text.strip()
        if text.startswith("!"):
            return cls(text[1:].strip(), False)
        if text.startswith("not "):
            return cls(text[4:].strip(), False)
        return cls(text, True)


def literals(*specs: str) -> frozenset[Literal]:
    return frozenset(Literal.parse(s) for s in specs)


def _check_consistent(lits: Iterable[Literal], what: str) -> frozenset[Literal]:
    lits = frozenset(lits)
    for lit in lits:
        if ~lit in lits:
            raise SemanticError(f"{what} contains both {lit.prop} and its negation")
    return lits


@dataclass(frozen=True)
class ActionSchema:
    name: str
    preconditions: frozenset[Literal] = frozenset()
    effects: frozenset[Literal] = frozenset()

    def __post_init__(self) -> None:
        if not NAME_RE.match(self.name):
            raise SemanticError(f"invalid action name {self.name!r}")
        object.__setattr__(
            self, "preconditions",
            _check_consistent(self.preconditions, f"precondition of {self.name}"))
        object.__setattr__(
            self, "effects", _check_consistent(self.effects, f"effect of {self.name}"))

    @property
    def add_set(self) -> frozenset[str]:
        return frozenset(l.prop for l in self.effects if l.positive)

    @property
    def delete_set(self) -> frozenset[str]:
        return frozenset(l.prop for l in self.effects if not l.positive)

    @property
    def propositions(self) -> frozenset[str]:
        return frozenset(l.prop for l in self.preconditions | self.effects)


@dataclass(frozen=True)
class Domain:
    name: str
    predicates: tuple[str, ...]
    actions: tuple[ActionSchema, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(self, "actions", tuple(self.actions))
        declared = set()
        for p in self.predicates:
            check_proposition(p)
            if p in declared:
                raise SemanticError(f"predicate {p} declared twice")
            declared.add(p)
        names = set()
        for a in self.actions:
            if a.name in names:
                raise SemanticError(f"duplicate action name {a.name}")
            names.add(a.name)
            undeclared = a.propositions - declared
            if undeclared:
                raise SemanticError(
                    f"action {a.name} uses undeclared predicate(s) {sorted(undeclared)}")

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise UnknownAction(f"unknown action {name!r}")

    @property
    def action_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.actions)


@dataclass(frozen=True)
class Problem:
    name: str
    domain_name: str
    init: frozenset[str]
    goal: frozenset[Literal] = field(default_factory=frozenset)


# --------------------------------------------------------------------------
# s-expression reader

_TOKEN_RE = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")


@dataclass
class _Atom:
    text: str
    line: int
    col: int


@dataclass
class _List:
    items: list
    line: int
    col: int


def _read_sexpr(text: str):
    stack: list[_List] = []
    top: list = []
    line, line_start = 1, 0
    for m in _TOKEN_RE.finditer(text):
        tok = m.group()
        col = m.start() - line_start + 1
        if tok[0].isspace() or tok[0] == ";":
            nl = tok.count("\n")
            if nl:
                line += nl
                line_start = m.start() + tok.rfind("\n") + 1
            continue
        if tok == "(":
            stack.append(_List([], line, col))
        elif tok == ")":
            if not stack:
                raise PDDLSyntaxError("unbalanced ')'", line, col)
            node = stack.pop()
            (stack[-1].items if stack else top).append(node)
        else:
            node = _Atom(tok.lower() if tok.startswith(":") else tok, line, col)
            (stack[-1].items if stack else top).append(node)
    if stack:
        node = stack[-1]
        raise PDDLSyntaxError("unclosed '('", node.line, node.col, "')'")
    if len(top) != 1 or not isinstance(top[0], _List):
        where = top[1] if len(top) > 1 else (top[0] if top else None)
        line_, col_ = (where.line, where.col) if where is not None else (1, 1)
        raise PDDLSyntaxError("expected exactly one top-level form", line_, col_, "(define ...)")
    return top[0]


def _end_pos(node: _List) -> tuple[int, int]:
    return (node.items[-1].line, node.items[-1].col) if node.items else (node.line, node.col)


def _expect_atom(node, expected: str, value: str | None = None) -> str:
    if not isinstance(node, _Atom):
        raise PDDLSyntaxError("unexpected list", node.line, node.col, expected)
    if value is not None and node.text.lower() != value:
        raise PDDLSyntaxError(f"unexpected token {node.text!r}", node.line, node.col, expected)
    return node.text


def _expect_list(node, expected: str) -> _List:
    if not isinstance(node, _List):
        raise PDDLSyntaxError(f"unexpected token {node.text!r}", node.line, node.col, expected)
    return node


def _header(form: _List, kind: str) -> tuple[str, list]:
    items = form.items
    if not items:
        raise PDDLSyntaxError("empty form", form.line, form.col, "define")
    _expect_atom(items[0], "define", "define")
    if len(items) < 2:
        raise PDDLSyntaxError("missing header", *_end_pos(form), f"({kind} NAME)")
    head = _expect_list(items[1], f"({kind} NAME)")
    if len(head.items) != 2:
        raise PDDLSyntaxError("malformed header", head.line, head.col, f"({kind} NAME)")
    _expect_atom(head.items[0], kind, kind)
    name = _expect_atom(head.items[1], "name")
    return name, items[2:]


def _parse_atom_prop(node) -> str:
    lst = _expect_list(node, "(predicate)")
    if len(lst.items) != 1 or not isinstance(lst.items[0], _Atom):
        raise PDDLSyntaxError("propositions take no arguments", lst.line, lst.col, "(p)")
    name = lst.items[0].text
    if not PROPOSITION_RE.match(name):
        raise PDDLSyntaxError(f"invalid predicate name {name!r}",
                              lst.items[0].line, lst.items[0].col, "[a-z][a-z0-9_]*")
    return name


def _parse_literal(node) -> Literal:
    lst = _expect_list(node, "literal")
    if lst.items and isinstance(lst.items[0], _Atom) and lst.items[0].text.lower() == "not":
        if len(lst.items) != 2:
            raise PDDLSyntaxError("'not' takes one argument", lst.line, lst.col, "(not (p))")
        return Literal(_parse_atom_prop(lst.items[1]), False)
    return Literal(_parse_atom_prop(lst), True)


def _parse_conjunction(node) -> list[Literal]:
    lst = _expect_list(node, "(and ...)")
    if lst.items and isinstance(lst.items[0], _Atom) and lst.items[0].text.lower() == "and":
        return [_parse_literal(x) for x in lst.items[1:]]
    if not lst.items:
        return []
    return [_parse_literal(lst)]


def _section(node) -> tuple[str, _List]:
    lst = _expect_list(node, "(:section ...)")
    if not lst.items or not isinstance(lst.items[0], _Atom) or not lst.items[0].text.startswith(":"):
        raise PDDLSyntaxError("expected a section keyword", lst.line, lst.col, ":keyword")
    return lst.items[0].text, lst


def _parse_action(sec: _List) -> tuple[str, list[Literal], list[Literal]]:
    items = sec.items[1:]
    if not items:
        raise PDDLSyntaxError("missing action name", *_end_pos(sec), "NAME")
    name = _expect_atom(items[0], "action name")
    if not NAME_RE.match(name):
        raise PDDLSyntaxError(f"invalid action name {name!r}", items[0].line, items[0].col)
    pre: list[Literal] = []
    eff: list[Literal] = []
    seen = set()
    i = 1
    while i < len(items):
        key = _expect_atom(items[i], ":precondition or :effect").lower()
        if key not in (":parameters", ":precondition", ":effect"):
            raise PDDLSyntaxError(f"unexpected keyword {key!r}", items[i].line, items[i].col,
                                  ":parameters, :precondition or :effect")
        if key in seen:
            raise PDDLSyntaxError(f"repeated {key}", items[i].line, items[i].col)
        seen.add(key)
        if i + 1 >= len(items):
            raise PDDLSyntaxError(f"missing value for {key}", items[i].line, items[i].col)
        value = items[i + 1]
        if key == ":parameters":
            if _expect_list(value, "()").items:
                raise PDDLSyntaxError("parameters are not supported", value.line, value.col, "()")
        elif key == ":precondition":
            pre = _parse_conjunction(value)
        else:
            eff = _parse_conjunction(value)
        i += 2
    return name, pre, eff


def parse_domain(text: str) -> Domain:
    name, sections = _header(_read_sexpr(text), "domain")
    predicates: list[str] = []
    actions: list[ActionSchema] = []
    for node in sections:
        key, sec = _section(node)
        if key == ":requirements":
            continue
        if key == ":predicates":
            predicates.extend(_parse_atom_prop(p) for p in sec.items[1:])
        elif key == ":action":
            aname, pre, eff = _parse_action(sec)
            actions.append(ActionSchema(aname, frozenset(pre), frozenset(eff)))
        else:
            raise PDDLSyntaxError(f"unsupported section {key!r}", sec.line, sec.col,
                                  ":predicates or :action")
    return Domain(name, tuple(predicates), tuple(actions))


def parse_problem(text: str, domain: Domain) -> Problem:
    name, sections = _header(_read_sexpr(text), "problem")
    domain_name = None
    init: set[str] = set()
    goal: list[Literal] = []
    for node in sections:
        key, sec = _section(node)
        if key == ":domain":
            if len(sec.items) != 2:
                raise PDDLSyntaxError("malformed :domain", sec.line, sec.col, "(:domain NAME)")
            domain_name = _expect_atom(sec.items[1], "domain name")
        elif key == ":init":
            init.update(_parse_atom_prop(p) for p in sec.items[1:])
        elif key == ":goal":
            if len(sec.items) != 2:
                raise PDDLSyntaxError("malformed :goal", sec.line, sec.col, "(:goal (and ...))")
            goal = _parse_conjunction(sec.items[1])
        else:
            raise PDDLSyntaxError(f"unsupported section {key!r}", sec.line, sec.col,
                                  ":domain, :init or :goal")
    if domain_name is None:
        raise SemanticError("problem does not name its domain")
    if domain_name != domain.name:
        raise SemanticError(f"problem targets domain {domain_name!r}, got {domain.name!r}")
    declared = set(domain.predicates)
    unknown = (init | {l.prop for l in goal}) - declared
    if unknown:
        raise SemanticError(f"problem uses undeclared predicate(s) {sorted(unknown)}")
    return Problem(name, domain_name, frozenset(init), _check_consistent(goal, "goal"))


# --------------------------------------------------------------------------
# state algebra and search

def satisfies(state: frozenset[str], conds: Iterable[Literal]) -> bool:
    return all(lit.holds(state) for lit in conds)


def apply(state: frozenset[str], action: ActionSchema) -> frozenset[str]:
    if not satisfies(state, action.preconditions):
        unmet = sorted(str(l) for l in action.preconditions if not l.holds(state))
        raise PreconditionViolation(f"{action.name}: unmet {' '.join(unmet)}")
    return (frozenset(state) - action.delete_set) | action.add_set


def plan(init: Iterable[str], goal: Iterable[Literal],
         actions: Sequence[ActionSchema]) -> list[str] | None:
    """Shortest plan by breadth-first search, or ``None`` if the goal is unreachable.

    Successors are generated in the order of ``actions``, so among equally short
    plans the one that is lexicographically first by declaration order wins.
    """
    start = frozenset(init)
    goal = frozenset(goal)
    if satisfies(start, goal):
        return []
    parent: dict[frozenset[str], tuple[frozenset[str], str] | None] = {start: None}
    frontier = deque([start])
    while frontier:
        state = frontier.popleft()
        for action in actions:
            if not satisfies(state, action.preconditions):
                continue
            nxt = (state - action.delete_set) | action.add_set
            if nxt in parent:
                continue
            parent[nxt] = (state, action.name)
            if satisfies(nxt, goal):
                steps = []
                node = nxt
                while parent[node] is not None:
                    node, name = parent[node]
                    steps.append(name)
                return steps[::-1]
            frontier.append(nxt)
    return None


def validate_plan(init: Iterable[str], goal: Iterable[Literal], steps: Sequence[str],
                  actions: Sequence[ActionSchema]) -> bool:
    by_name = {a.name: a for a in actions}
    for name in steps:
        if name not in by_name:
            raise UnknownAction(f"unknown action {name!r}")
    state = frozenset(init)
    for name in steps:
        action = by_name[name]
        if not satisfies(state, action.preconditions):
            return False
        state = apply(state, action)
    return satisfies(state, goal)


def load_disassembly_domain() -> Domain:
    return parse_domain(resources.files("nstamp.data").joinpath("disassembly.pddl").read_text())


def load_disassembly_problem(domain: Domain | None = None) -> Problem:
    domain = domain or load_disassembly_domain()
    text = resources.files("nstamp.data").joinpath("disassembly_problem.pddl").read_text()
    return parse_problem(text, domain)
