"""Check the sufficient convergence conditions for given coefficients.

Three conditions govern the iteration's guarantees: L0 < 1/e bounds the
fields' Lipschitz constants uniformly, c1(L1) < 1 bounds their linear
growth, and c2(L1, L1) < 1 makes the iteration a contraction.  They are
conservative worst-case bounds; the solver often converges well outside
them.
"""

from fbsdekit import AssumptionConstants, check_conditions
from fbsdekit.diagnostics import report_to_table


def show(label, constants):
    report = check_conditions(constants)
    print(f"--- {label}")
    print(f"    L0 = {report.L0:.4g}  (need < 1/e = 0.3679)  "
          f"-> {'ok' if report.conditionL0 else 'violated'}")
    print(f"    c1(L1) = {report.c1_at_L1:.4g}  (need < 1)      "
          f"-> {'ok' if report.conditionC1 else 'violated'}")
    print(f"    c2(L1, L1) = {report.c2_at_L1L1:.4g}  (need < 1)      "
          f"-> {'ok' if report.conditionC2 else 'violated'}")


base = dict(k_b=0.0, k_f=-1.0, K=1.0, sigma_x=0.2, f_x=0.5, f_z=0.2,
            g_x=1.0, b_0=0.1, sigma_0=0.1, f_0=0.2, g_0=1.0, Sigma=1.0)

show("decoupled forward equation (b_y = b_z = sigma_y = 0), T = 1",
     AssumptionConstants(b_y=0.0, b_z=0.0, sigma_y=0.0, T=1.0, **base))

show("weak coupling, short horizon", AssumptionConstants(
    b_y=0.05, b_z=0.01, sigma_y=0.05, T=0.25, **base))

show("same couplings, horizon x100", AssumptionConstants(
    b_y=0.05, b_z=0.01, sigma_y=0.05, T=25.0, **base))

print("\nfull report for the weakly coupled case:\n")
print(report_to_table(check_conditions(
    AssumptionConstants(b_y=0.05, b_z=0.01, sigma_y=0.05, T=0.25, **base))))
