"""
Which estimator is less biased?
===============================

Under selection the IV estimator is biased against the confounding while OLS
is biased with it. In the baseline model IV has the smaller bias exactly when
psi * gamma**2 <= 1/2. This script draws the region map as text and writes the
full grid to CSV.
"""

# %%
import math

from ivsel import sensitivity

result = sensitivity.fig2b(steps=21)
cells = {(round(r.gamma, 3), round(r.severity, 4)): r.least_biased for r in result.rows}
gammas = sorted({g for g, _ in cells})
severities = sorted({q for _, q in cells})

# %%
# Rows are gamma from 1 down to 0, columns severity from left (mild) to right.
# ``I`` marks IV, ``O`` marks OLS and ``.`` an infeasible cell.
symbol = {"IV": "I", "OLS": "O", "tie": "=", "infeasible": "."}
for g in reversed(gammas):
    print(f"gamma {g:4.2f} ", "".join(symbol[cells[(g, q)]] for q in severities))

# %%
# Any selection effect weaker than sqrt(1/2) keeps IV ahead no matter how
# hard the sample is truncated.
print("threshold on |gamma|:", math.sqrt(0.5))

# %%
# Persist the grid for plotting elsewhere.
with open("region_map.csv", "w") as fh:
    fh.write(result.to_csv())
