"""Coherent nuclear oscillation versus pulse number, then the
two-block correlation measurement whose spectrum shows the hyperfine
splitting. Also runs an eight-member ensemble for comparison.

Run: python demos/oscillation_and_correlation.py   (about 10 s)
"""
import numpy as np

from nvdd import FieldConfig, NoiseModel, NvParams, effective_coupling
from nvdd.experiments import (EnsembleSpec, correlation_scan, ensemble_average, fft_spectrum,
                              fit_oscillation, oscillation_scan)

params = NvParams()

# pick the tilt that gives |g| = 59 kHz
b_perp = 5e-3 * 59e3 / abs(effective_coupling(params, FieldConfig(0.28, 5e-3)).g)
field = FieldConfig(0.28, b_perp)
print(f"b_perp = {b_perp * 1e3:.3f} mT, closed-form |g| = {abs(effective_coupling(params, field).g) / 1e3:.1f} kHz")

n = np.arange(0, 641, 8)
osc = oscillation_scan(n, params, field)
fit = fit_oscillation(osc)
print(f"oscillation period {fit.period:.0f} pulses, fitted |g| {fit.g / 1e3:.1f} kHz")

# with a 10 us coherence time the contrast fades
noisy = oscillation_scan(n, params, field, noise=NoiseModel(t2_dd=10e-6))
print("N_p   S(clean)  S(T2=10us)")
for k in range(0, len(n), 10):
    print(f"{n[k]:4d}  {osc.s[k]:+.4f}   {noisy.s[k]:+.4f}")

t = np.arange(0, 4e-6 + 1e-12, 20e-9)
corr = correlation_scan(t, None, params, field)
p = fft_spectrum(corr)
print("correlation peaks:", ", ".join(f"{f / 1e6:.3f}" for f in p.peak_freqs), "MHz")
print(f"splitting {p.splitting / 1e6:.3f} MHz (resolution {p.resolution / 1e6:.3f} MHz)")

ens = ensemble_average(correlation_scan, EnsembleSpec(8, 0.5e-3, 0.5e-3, 10e-6, seed=0), params, field,
                       t_free_range=t)
print(f"ensemble splitting {fft_spectrum(ens).splitting / 1e6:.3f} MHz")
