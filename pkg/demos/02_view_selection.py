"""Compare the three camera strategies on one scanned elbow and save the best views.

    python3 demos/02_view_selection.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from plantfit.geometry import normalize_unit_sphere
from plantfit.render import RenderConfig, compute_acquisition_rate, render_depth_image, write_pgm
from plantfit.synth import CorpusConfig, jittered_spec, scan_component
from plantfit.views import acquisition_rate_views, fit_plane_ransac, ransac_views, ring_cameras

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_views")
out.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(3)
cloud = scan_component(jittered_spec("Elbow 90", rng), CorpusConfig(), rng, "elbow_demo")
norm, _ = normalize_unit_sphere(cloud)
cfg = RenderConfig()
plane = fit_plane_ransac(norm)
print(f"{len(norm)} points; dominant plane normal {np.round(plane.normal, 3)} with {len(plane.inliers)} inliers")

for name, poses in [
    ("ring12", ring_cameras()),
    ("ransac", ransac_views(norm, 10.0, render_cfg=cfg)),
    ("acqrate", acquisition_rate_views(norm, 10.0, cfg)),
]:
    images = [render_depth_image(norm, p, cfg) for p in poses]
    rates = [compute_acquisition_rate(im, len(norm)) for im in images]
    best = int(np.argmax(rates))
    write_pgm(images[best], out / f"{name}_best.pgm", comment=f"{name} pose {poses[best]}")
    print(f"{name:8s} {len(poses):2d} views, acquisition rate mean {np.mean(rates):.3f}, best {rates[best]:.3f}")
print(f"best views written to {out}/")
