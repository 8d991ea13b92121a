from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nstamp.pddl import (ActionSchema, Domain, Literal, PDDLSyntaxError, PreconditionViolation,
                         SemanticError, UnknownAction, apply, literals, parse_domain,
                         parse_problem, plan, satisfies, validate_plan)

from oracles import oracle_shortest_length, random_strips

PREDICATES = ("have_coarse_pose", "pattern", "near_screw", "above_screw", "disassembled",
              "target_aim", "socketed")
GOAL = literals("disassembled")


# --------------------------------------------------------------------------
# parsing

def test_bundled_domain_shape(domain):
    assert domain.name == "screw_disassembly"
    assert domain.predicates == PREDICATES
    assert domain.action_names == ("Move", "Mate_vision", "Mate_force", "Insert", "Disassemble")


@pytest.mark.parametrize("name, pre, eff", [
    ("Move", ["have_coarse_pose", "!near_screw"], ["near_screw", "above_screw"]),
    ("Mate_vision", ["!pattern", "near_screw", "!target_aim"],
     ["pattern", "above_screw", "target_aim"]),
    ("Mate_force", ["pattern", "near_screw", "!above_screw", "!target_aim"],
     ["!pattern", "above_screw", "target_aim"]),
    ("Insert", ["target_aim", "above_screw"], ["socketed", "!above_screw"]),
    ("Disassemble", ["socketed", "!disassembled"], ["disassembled"]),
])
def test_bundled_schemas_match_the_primitive_table(domain, name, pre, eff):
    action = domain.action(name)
    assert action.preconditions == literals(*pre)
    assert action.effects == literals(*eff)


def test_bundled_problem(problem):
    assert problem.init == frozenset({"have_coarse_pose"})
    assert problem.goal == GOAL


def test_empty_action_list():
    d = parse_domain("(define (domain empty) (:predicates (p) (q)))")
    assert d.actions == () and d.predicates == ("p", "q")


def test_comments_and_case_insensitive_keywords():
    d = parse_domain("""
        ; header comment
        (define (domain d)
          (:PREDICATES (p))   ; trailing
          (:action A :Precondition (and) :EFFECT (p)))""")
    assert d.action("A").effects == literals("p")
    assert d.action("A").preconditions == frozenset()


def test_undeclared_predicate_in_action():
    with pytest.raises(SemanticError, match="foo"):
        parse_domain("(define (domain d) (:predicates (p))"
                     " (:action A :precondition (and (foo)) :effect (and (p))))")


def test_duplicate_action_name():
    with pytest.raises(SemanticError, match="duplicate"):
        parse_domain("(define (domain d) (:predicates (p))"
                     " (:action A :effect (p)) (:action A :effect (not (p))))")


def test_contradictory_literal_set():
    with pytest.raises(SemanticError):
        parse_domain("(define (domain d) (:predicates (p))"
                     " (:action A :precondition (and (p) (not (p))) :effect (and)))")


@pytest.mark.parametrize("text, line, col", [
    ("(define (domain d) (:predicates (p))", 1, 1),
    ("(define (domain d)\n  (:predicates (p)))\n)", 3, 1),
    ("(define (domain d)\n  (:predicates (p q)))", 2, 16),
    ("(define (domain d) (:actions))", 1, 20),
])
def test_syntax_error_positions(text, line, col):
    with pytest.raises(PDDLSyntaxError) as err:
        parse_domain(text)
    assert (err.value.line, err.value.column) == (line, col)


def test_syntax_error_names_expected_token():
    with pytest.raises(PDDLSyntaxError) as err:
        parse_domain("(define (domain d) (:predicates (p))")
    assert err.value.expected == "')'"


def test_problem_with_unknown_goal_predicate(domain):
    with pytest.raises(SemanticError, match="bar"):
        parse_problem("(define (problem x) (:domain screw_disassembly)"
                      " (:init (have_coarse_pose)) (:goal (and (bar))))", domain)


def test_problem_for_another_domain(domain):
    with pytest.raises(SemanticError):
        parse_problem("(define (problem x) (:domain other) (:init) (:goal (and)))", domain)


def test_problem_init_equal_to_goal_plans_empty(domain):
    p = parse_problem("(define (problem x) (:domain screw_disassembly)"
                      " (:init (disassembled)) (:goal (and (disassembled))))", domain)
    assert plan(p.init, p.goal, domain.actions) == []


# --------------------------------------------------------------------------
# state algebra

def test_satisfies_closed_world():
    assert satisfies(frozenset({"near_screw"}), literals("near_screw", "!target_aim"))
    assert satisfies(frozenset(), frozenset())
    assert not satisfies(frozenset({"pattern"}), literals("!pattern"))


def test_apply_move(domain):
    s = apply(frozenset({"have_coarse_pose"}), domain.action("Move"))
    assert s == {"have_coarse_pose", "near_screw", "above_screw"}


def test_apply_mate_force(domain):
    s = apply(frozenset({"pattern", "near_screw"}), domain.action("Mate_force"))
    assert s == {"near_screw", "above_screw", "target_aim"}


def test_apply_unmet_precondition(domain):
    with pytest.raises(PreconditionViolation):
        apply(frozenset(), domain.action("Disassemble"))


def test_apply_leaves_input_untouched(domain):
    s = frozenset({"have_coarse_pose"})
    apply(s, domain.action("Move"))
    assert s == {"have_coarse_pose"}


@given(st.frozensets(st.sampled_from(PREDICATES)))
def test_apply_postconditions_hold(state):
    from nstamp.pddl import load_disassembly_domain
    for action in load_disassembly_domain().actions:
        if not satisfies(state, action.preconditions):
            continue
        out = apply(state, action)
        assert satisfies(out, action.effects)
        assert apply(state, action) == out
        untouched = set(PREDICATES) - action.add_set - action.delete_set
        assert {p for p in untouched if p in out} == {p for p in untouched if p in state}


def test_literal_shorthand():
    assert Literal.parse("!p") == Literal("p", False)
    assert Literal.parse("not p") == ~Literal("p")
    assert str(Literal("p", False)) == "(not (p))"


@pytest.mark.parametrize("bad", ["", "Near", "9p", "p-q"])
def test_proposition_names_are_checked(bad):
    with pytest.raises(SemanticError):
        Literal(bad)


# --------------------------------------------------------------------------
# planning

def test_initial_plan(domain, problem):
    assert plan(problem.init, problem.goal, domain.actions) == \
        ["Move", "Mate_vision", "Insert", "Disassemble"]


def test_abnormal_state_plan(domain):
    assert plan({"pattern", "near_screw"}, GOAL, domain.actions) == \
        ["Mate_force", "Insert", "Disassemble"]


def test_goal_already_met(domain):
    assert plan({"disassembled"}, GOAL, domain.actions) == []


def test_unreachable_goal_is_none():
    d = Domain("d", ("p", "q"), (ActionSchema("A", literals("q"), literals("p")),))
    assert plan(frozenset(), literals("p"), d.actions) is None


def test_tie_break_by_declaration_order():
    a = ActionSchema("A", frozenset(), literals("g"))
    b = ActionSchema("B", frozenset(), literals("g"))
    assert plan(frozenset(), literals("g"), (a, b)) == ["A"]
    assert plan(frozenset(), literals("g"), (b, a)) == ["B"]


def test_validate_plan(domain, problem):
    steps = ["Move", "Mate_vision", "Insert", "Disassemble"]
    assert validate_plan(problem.init, problem.goal, steps, domain.actions)
    assert not validate_plan(frozenset(), GOAL, ["Disassemble"], domain.actions)
    with pytest.raises(UnknownAction):
        validate_plan(problem.init, GOAL, ["Teleport"], domain.actions)


def _to_schemas(actions):
    out = []
    for name, pp, pn, add, delete in actions:
        pre = {Literal(f"p{i}") for i in pp} | {Literal(f"p{i}", False) for i in pn}
        eff = {Literal(f"p{i}") for i in add} | {Literal(f"p{i}", False) for i in delete}
        out.append(ActionSchema(name, frozenset(pre), frozenset(eff)))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plan_matches_exhaustive_oracle(seed):
    k, actions, init, (gp, gn) = random_strips(np.random.default_rng(seed))
    schemas = _to_schemas(actions)
    init_s = frozenset(f"p{i}" for i in init)
    goal = frozenset({Literal(f"p{i}") for i in gp} | {Literal(f"p{i}", False) for i in gn})
    found = plan(init_s, goal, schemas)
    expected = oracle_shortest_length(k, actions, init, (gp, gn))
    if expected is None:
        assert found is None
    else:
        assert found is not None and len(found) == expected
        assert validate_plan(init_s, goal, found, schemas)
        assert plan(init_s, goal, schemas) == found
