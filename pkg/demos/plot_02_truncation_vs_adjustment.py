"""
Truncation is a milder form of adjustment
=========================================

Dropping every unit with S below a threshold s0 shrinks the variance of S by a
factor 1 - psi(s0). The IV bias under truncation is the adjustment bias with
gamma squared scaled by psi, so it grows towards the adjustment bias as the
truncation gets more severe.
"""

# %%
import numpy as np

from ivsel import SelectionRule, build_model, plim_matrix
from ivsel.trunc_normal import psi, severity_to_threshold

model = build_model("baseline")
adjusted = plim_matrix(model, SelectionRule.adjustment())
print(f"adjustment bias: {adjusted.iv_bias:+.6f}")

# %%
# Sweep the share of units truncated away.
for q in (0.05, 0.25, 0.5, 0.75, 0.95, 0.999):
    rule = SelectionRule.truncation(severity=q)
    r = plim_matrix(model, rule)
    print(f"severity {q:5.3f}  psi {r.psi_used:.4f}  IV bias {r.iv_bias:+.6f}")

# %%
# The truncation bias never exceeds the adjustment bias in magnitude, and the
# gap closes as the threshold moves into the upper tail.
for s0 in np.arange(0, 9, 2):
    r = plim_matrix(model, SelectionRule.truncation(threshold=float(s0)))
    print(f"s0 = {s0}: psi = {float(psi(s0)):.4f}, gap to adjustment = {r.iv_plim - adjusted.iv_plim:+.6f}")

print("psi at the median:", float(psi(severity_to_threshold(0.5))), "= 2/pi =", 2 / np.pi)
