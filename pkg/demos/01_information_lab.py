"""How much label information does a coarsened view of the input keep?

Let ``U`` be an input, ``V`` a label and ``xi`` a deterministic map, for
instance "hide some features".  Passing ``U`` through ``xi`` can only lose
information about ``V``, and the loss is an average of KL divergences
between the label distributions before and after coarsening.  This script
checks that identity exactly on small discrete systems.
"""

import numpy as np

from mirrams.milab import DeterministicMap, DiscreteJoint, mutual_information, run_suite, verify_proposition

# Four inputs, two labels.  Inputs 0/1 and 2/3 are merged by the map.
table = np.array([[0.20, 0.05],
                  [0.05, 0.20],
                  [0.15, 0.10],
                  [0.10, 0.15]])
joint = DiscreteJoint(table)
merge = DeterministicMap(np.array([0, 0, 1, 1]))
rep = verify_proposition(joint, merge)

print("I(U;V)        =", round(rep.mi_u, 6), "nats")
print("I(xi(U);V)    =", round(rep.mi_xi, 6), "nats")
print("loss Delta    =", round(rep.delta, 6))
print("E_U[KL]       =", round(rep.expected_kl, 6))
print("max_u KL      =", round(rep.max_kl, 6))
print("identity gap  =", f"{rep.identity_gap:.1e}")

# Merging inputs whose label distributions agree costs much less.
keep = verify_proposition(joint, DeterministicMap(np.array([0, 1, 0, 1])))
print("\nmerging 0/2 and 1/3 instead loses", round(keep.delta, 6), "of", round(mutual_information(joint), 6))

reports = run_suite(200, seed=0)
print(f"\nrandom systems: {sum(r.passed for r in reports)}/200 pass, "
      f"largest identity gap {max(r.identity_gap for r in reports):.1e}")
