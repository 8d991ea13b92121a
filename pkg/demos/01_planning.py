"""Symbolic layer: the screw-removal domain and what the planner does with it.

Run:  python demos/01_planning.py
"""

from nstamp.pddl import load_disassembly_domain, load_disassembly_problem, plan

domain = load_disassembly_domain()
problem = load_disassembly_problem(domain)

print("Primitives and their symbolic contracts")
for action in domain.actions:
    pre = " ".join(sorted(str(l) for l in action.preconditions)) or "-"
    eff = " ".join(sorted(str(l) for l in action.effects))
    print(f"  {action.name:<12} pre: {pre}")
    print(f"  {'':<12} eff: {eff}")

# From the coarse pose alone the robot approaches and aligns with vision.
print("\nFrom", sorted(problem.init), "->", plan(problem.init, problem.goal, domain.actions))

# After a failed insert the abnormal-state rule keeps the proximity facts and
# sets `pattern`, which only Mate_force accepts.
abnormal = {"have_coarse_pose", "near_screw", "pattern"}
print("From", sorted(abnormal), "->", plan(abnormal, problem.goal, domain.actions))

# A belief with no route to the goal gives None rather than raising.
print("From ['socketed', 'disassembled'] with goal (not disassembled) ->",
      plan({"socketed", "disassembled"}, {~l for l in problem.goal}, domain.actions))
