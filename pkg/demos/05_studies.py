# coding: utf-8

# # Monte Carlo studies
#
# Every study returns a report with named verdicts.  These runs are much
# smaller than the defaults so they finish in about a minute.

from quartic_nls import default_spec, run_study

# Under the gauged flow the white noise law should stay put: |w_n|^2 ~ Exp(1)
# and uniform phases at each time.  The control evolves coloured data and
# must be flagged.

rep = run_study(default_spec("invariance", cutoffs=(6,), times=(0.1,), samples=200, control=True))
for name, v in rep.verdicts.items():
    print(f"{name:40s} {v['passed']}  {v['rule']}")

# On each dyadic block the L^4 size of the resonant flow is fitted against
# N.  The report compares the log-log slope with its target.

rep = run_study(default_spec("z1-scaling", cutoffs=(4, 8, 16, 32), samples=50))
print(rep.statistics)
print("passed:", rep.passed)

# Reports serialize to JSON and a flat CSV of cells.

print(rep.to_csv().splitlines()[0])
