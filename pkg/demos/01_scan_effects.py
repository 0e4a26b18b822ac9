"""Scan one tee three ways and show what occlusion and distance do to the cloud.

    python3 demos/01_scan_effects.py
"""

import numpy as np

from plantfit.synth import ComponentSpec, ScanConfig, generate_component_surface, simulate_scan

surface = generate_component_surface(ComponentSpec.default("Tee"), density=40000.0, seed=0)
print(f"ideal surface: {len(surface)} points")

for label, cfg in [
    ("near, no occlusion", ScanConfig((2.0, 0.0, 0.5), occlusion=False)),
    ("near, occluded", ScanConfig((2.0, 0.0, 0.5))),
    ("far, occluded", ScanConfig((6.0, 0.0, 1.5))),
]:
    scan = simulate_scan(surface, cfg)
    facing = (scan.points - scan.points.mean(axis=0)) @ np.array(cfg.scanner_position)
    print(f"{label:20s} {len(scan):6d} points, {np.mean(facing > 0):.0%} on the scanner side")
