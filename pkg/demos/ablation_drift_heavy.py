"""
Sensor ablation on the drift-heavy U-path.

One physical run is simulated in full mode; the other modes replay its tag
deployment schedule so that all four see the same motion and sensor streams.
Without tags the heading error picked up in the slip patch is never
corrected, so radar_only ends up about as far off as odometry alone. The
second tag is mapped with a large error in both tag-using modes, because the
radar adds little correction under the default radar noise.

    python demos/ablation_drift_heavy.py [seed]

Expect a few minutes of runtime (three closed-loop runs plus odometry only).
"""

import sys

from uwbslam.evaluation import ABLATION_MODES, evaluate_run
from uwbslam.runner import run_scenario
from uwbslam.scenario import load_scenario


def main(seed=0):
    sc = load_scenario("u_path_drift_heavy")
    full = run_scenario(sc, seed, "full")
    rows = []
    for mode in ABLATION_MODES:
        res = full if mode == "full" else run_scenario(sc, seed, mode, schedule=full.schedule)
        rep = evaluate_run(res)[0]
        tag1 = rep.tag_error(1)
        rows.append((mode, rep.rms_ate, rep.final_pose_error, tag1, res.runtime))

    print(f"{sc.name}, seed {seed}, {len(full.schedule)} tag deployments")
    print(f"{'mode':>11s} {'rms_ate':>8s} {'final':>8s} {'tag 1':>8s} {'time':>6s}")
    for mode, ate, fin, tag1, rt in rows:
        t1 = "-" if tag1 is None else f"{tag1:.2f}"
        print(f"{mode:>11s} {ate:8.3f} {fin:8.3f} {t1:>8s} {rt:5.0f}s")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
