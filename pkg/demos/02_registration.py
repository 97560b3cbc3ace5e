"""Register a warped, re-lit image against a template.

The solver estimates a homography plus a global gain/bias pair from an
identity initial guess, refining over a 3-level pyramid.  Here the
current image is the bundled reference warped by a known homography and
then dimmed, so every estimate can be checked against ground truth.
"""

import numpy as np

from homreg import (
    Mode, ReferenceTemplate, SolverConfig, TemplateRegion,
    corner_rms_error, estimate, exp_lie,
)
from homreg.bench import bundled_reference_path
from homreg.image import load_gray
from homreg.synthetic import warp_image

ref_image = load_gray(bundled_reference_path())
region = TemplateRegion(350, 216, 100, 100)
ref = ReferenceTemplate(ref_image, region)

# Ground truth: a mild projective motion plus a photometric change.
v = np.array([4.0, -6.0, 0.02, 0.01, 0.015, 0.005, 2e-5, -1e-5])
H_true = exp_lie(v)
alpha_true, beta_true = 1.15, -8.0
# The solver models alpha * I(warped) + beta = I_ref, so build the
# current image by inverting that relation.
cur = (warp_image(ref_image, H_true) - beta_true) / alpha_true

report = estimate(ref, cur, SolverConfig(mode=Mode.UNIFIED))

print("step   corner RMS   |z|        w_FB")
corners = region.corners()
for s in report.steps:
    rms = corner_rms_error(s.H, H_true, corners)
    print(f"{s.label:<6} {rms:10.4f}   {s.step_norm:.2e}   {s.w_fb:.3f}")

final = corner_rms_error(report.H, H_true, corners)
print(f"\nfinal corner RMS: {final:.4f} px")
print(f"alpha: {report.alpha:.4f} (true {alpha_true})")
print(f"beta:  {report.beta:.4f} (true {beta_true})")
print(f"converged: {report.converged}")
print("\nNote: building the pair synthetically resamples the image, and")
print("the solver resamples it again, so the registered view is slightly")
print("low-passed relative to the template; the fitted gain runs a")
print("couple percent high to restore the lost contrast, with the bias")
print("sliding to keep the mean matched.  On pairs without geometric")
print("warping the gain/bias recovery is accurate to 1e-3.")
