"""Score both builtin race scenarios and the delay-compensation ablation."""

from racemtt.config import EngineConfig
from racemtt.evaluation import RunConfig, run

for name in ("oval-overtake", "roadcourse-chase"):
    bundle = run(RunConfig(scenario=name))
    m = bundle.summary["metrics"]
    print(f"{name}: tracked pos RMSE {m['tracked']['e_pos']['rmse']:.3f} m, "
          f"raw LiDAR {m['raw_lidar']['e_pos']['rmse']:.3f} m, "
          f"speed {m['tracked']['e_v']['rmse']:.3f} m/s, "
          f"mean cycle {bundle.timing['mean_ms']:.2f} ms")

off = run(RunConfig(scenario="oval-overtake", engine=EngineConfig(delay_compensation=False)))
print(f"longitudinal RMSE without delay compensation: "
      f"{off.summary['metrics']['tracked']['e_long']['rmse']:.3f} m")
