"""Shelving efficiency at the optimal pulse, full rate equations vs reduced model.

    python3 scripts/shelving_summary.py [B ...]
"""
import sys

from ionsim.atomic import D32, D52, P32, S12, FieldConfig, ca40_scheme
from ionsim.shelving import optimal_pulse, reduced_model


def main(argv=None):
    fields = [float(b) for b in (argv if argv is not None else sys.argv[1:])] or \
        [1e-3, 3e-3, 1e-2, 5e-2]
    ca = ca40_scheme()
    g15 = ca.decay_rates[(S12, P32)]
    g25, g35 = ca.decay_rates[(D32, P32)], ca.decay_rates[(D52, P32)]
    print(f"branching limit {g35 / (g35 + g25):.4f}")
    print(f"{'B [T]':>9s} {'t_opt [s]':>10s} {'eps':>7s} {'t_red [s]':>10s} {'eps_red':>7s}")
    for b in fields:
        t, eps = optimal_pulse(ca, FieldConfig(b), g15)
        red = reduced_model(FieldConfig(b), g15)
        print(f"{b:9.2e} {t:10.3e} {eps:7.4f} {red.t_max:10.3e} {red.epsilon_max:7.4f}")


if __name__ == "__main__":
    main()
