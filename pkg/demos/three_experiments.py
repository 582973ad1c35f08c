"""Run the NoGrNoSa, GrOnly and GrPlusSa experiments on fourteen synthetic operators."""

from ergohrc.kpi import aggregate_kpis
from ergohrc.simulation import make_profiles, run_protocol

profiles = make_profiles(14, root_seed=2023)
results = run_protocol(profiles)

for mode, result in results.items():
    sa, riom = aggregate_kpis(result.records)
    adapted = sum(h.adapted for run in result.runs.values() for h in run.handovers)
    print(f"{mode.value:<9} mean SA {sa:6.2f}%  mean RiOM {riom:6.2f}%  "
          f"adapted handovers {adapted:2d}  failed {len(result.failed)}")

print("\nper-operator report for GrPlusSa:")
print(results[next(reversed(results))].kpi_report(), end="")
