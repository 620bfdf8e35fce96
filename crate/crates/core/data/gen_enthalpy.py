#!/usr/bin/env python3
"""Regenerate enthalpy.csv from Miedema cellular-model parameters.

Binary values are the chemical term of the Miedema model for an equiatomic
liquid, H_AB = 0.5 * c_B^s * dH_inter(A in B), with surface concentration
c_B^s = V_B / (V_A + V_B) using V = V_m^(2/3). Elastic and structural
contributions are ignored. Transition-metal hybridization R* is taken as 1
for every transition metal; R/P = 0.73 * R*_A * R*_B for mixed pairs.

Parameters: phi* (V), n_ws^(1/3) (d.u.^(1/3)), V_m^(2/3) (cm^2), R*,
transition flag. Values follow the de Boer et al. compilation (rounded).

Usage: python3 gen_enthalpy.py elements.csv > enthalpy.csv
"""
import csv
import sys

# symbol: (phi, nws13, v23, r_star, transition)
MIEDEMA = {
    "Ni": (5.20, 1.75, 3.52, 1.0, True),
    "Ti": (3.80, 1.52, 4.12, 1.0, True),
    "Hf": (3.55, 1.45, 5.65, 1.0, True),
    "Zr": (3.45, 1.41, 5.81, 1.0, True),
    "Pd": (5.45, 1.67, 4.29, 1.0, True),
    "Pt": (5.65, 1.78, 4.36, 1.0, True),
    "Au": (5.15, 1.57, 4.72, 1.0, True),
    "Cu": (4.55, 1.47, 3.70, 1.0, True),
    "Fe": (4.93, 1.77, 3.69, 1.0, True),
    "Co": (5.10, 1.75, 3.55, 1.0, True),
    "Al": (4.20, 1.39, 4.64, 1.9, False),
    "Nb": (4.05, 1.64, 4.89, 1.0, True),
    "Ta": (4.05, 1.63, 4.89, 1.0, True),
    "V": (4.25, 1.64, 4.12, 1.0, True),
    "Cr": (4.65, 1.73, 3.74, 1.0, True),
    "Mn": (4.45, 1.61, 3.78, 1.0, True),
    "Mo": (4.65, 1.77, 4.45, 1.0, True),
    "W": (4.80, 1.81, 4.50, 1.0, True),
    "Ag": (4.45, 1.39, 4.72, 1.0, True),
    "Sn": (4.15, 1.24, 6.43, 2.8, False),
    "Ga": (4.10, 1.31, 5.19, 2.3, False),
    "In": (3.90, 1.17, 6.31, 2.9, False),
    "Si": (4.70, 1.50, 4.20, 2.1, False),
    "B": (4.75, 1.55, 2.80, 3.0, False),
    "Sc": (3.25, 1.27, 6.09, 1.0, True),
    "Y": (3.20, 1.21, 7.34, 1.0, True),
    "Re": (5.40, 1.86, 4.61, 1.0, True),
    "Ru": (5.40, 1.83, 4.15, 1.0, True),
    "Rh": (5.40, 1.76, 4.10, 1.0, True),
    "Ir": (5.55, 1.83, 4.18, 1.0, True),
    "Zn": (4.10, 1.32, 4.38, 1.4, False),
    "Sb": (4.40, 1.26, 6.60, 2.0, False),
    "Ge": (4.55, 1.37, 4.63, 2.3, False),
    "Mg": (3.45, 1.17, 5.81, 0.4, False),
    "La": (3.05, 1.09, 8.00, 1.0, True),
    "Gd": (3.20, 1.17, 7.34, 1.0, True),
    "C": (6.20, 1.90, 1.80, 4.2, False),
    "Be": (4.20, 1.60, 2.88, 0.4, False),
    "Os": (5.40, 1.85, 4.21, 1.0, True),
}

Q_OVER_P = 9.4


def p_const(ta, tb):
    if ta and tb:
        return 14.1
    if not ta and not tb:
        return 10.6
    return 12.35


def h_mix(a, b):
    pa, na, va, ra, ta = MIEDEMA[a]
    pb, nb, vb, rb, tb = MIEDEMA[b]
    p = p_const(ta, tb)
    r_over_p = 0.73 * ra * rb if ta != tb else 0.0
    bracket = -((pa - pb) ** 2) + Q_OVER_P * (na - nb) ** 2 - r_over_p
    inter = 2.0 * p * va / (1.0 / na + 1.0 / nb) * bracket
    cs_b = vb / (va + vb)
    return 0.5 * cs_b * inter


def main():
    with open(sys.argv[1], newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    symbols = [r[0] for r in rows[1:]]
    out = sys.stdout
    out.write("# Binary mixing enthalpies H_mix^ij (kJ/mol), equiatomic liquid,\n")
    out.write("# chemical term of the Miedema model; generated by gen_enthalpy.py.\n")
    out.write("# Symmetrized as the mean of the A-in-B and B-in-A estimates, rounded to 0.1.\n")
    out.write("symbol," + ",".join(symbols) + "\n")
    for a in symbols:
        vals = []
        for b in symbols:
            if a == b:
                vals.append("0")
            else:
                h = 0.5 * (h_mix(a, b) + h_mix(b, a))
                vals.append(f"{round(h, 1):.1f}")
        out.write(a + "," + ",".join(vals) + "\n")


if __name__ == "__main__":
    main()
