# Buck converter physics: steady-state waveforms and the peak observations.
#
# The simulator steps forward Euler through each switching cycle.  Running it
# to steady state gives one periodic waveform per load; its maxima are the
# (i_peak, u_out_peak) pairs the PINN learns from.

import numpy as np

from autopinn import NOMINAL, OperatingPoint, extract_peaks, steady_state

print("nominal parameters:")
for name, value in NOMINAL.as_dict().items():
    print(f"  {name:7s} {value:g}")

# One operating point per load resistor.
for load in (1, 2, 3):
    op = OperatingPoint(duty=0.5, f_s=50e3, load_index=load)
    traj = steady_state(NOMINAL, op)
    i_pk, u_pk = extract_peaks(traj)
    ripple = traj.i.max() - traj.i.min()
    print(f"\nload R_{load}: steady after {traj.steady_cycle} cycles")
    print(f"  valley  i={traj.i[0]:.4f} A  u_c={traj.u_c[0]:.4f} V")
    print(f"  peaks   i={i_pk:.4f} A  u_out={u_pk:.4f} V")
    print(f"  ripple  {ripple:.4f} A, mean output {traj.u_out[:-1].mean():.4f} V")

# Duty sweep: the mean output tracks duty * V_in minus the resistive and diode drops.
print("\nduty sweep at R_1:")
for duty in np.linspace(0.2, 0.8, 4):
    traj = steady_state(NOMINAL, OperatingPoint(duty=duty, load_index=1))
    print(f"  D={duty:.2f}  u_avg={traj.u_out[:-1].mean():.3f} V  (ideal D*V_in={duty * NOMINAL.V_in:.3f})")
