"""Watch a 1:1 protected service lose its working path and come back.

    python3 demos/protection_timeline.py
"""

from bridgesim import scenario
from bridgesim.simnet import Trace

trace = Trace(frames=False)
result = scenario.run(scenario.load("protection_switch"), trace=trace)
for line in trace.lines:
    if line.startswith(("LINK", "PROT", "CTRL")) or ("defect-raised" in line and "mep=1 " in line):
        print(line)

paths = {}
for d in result.net.deliveries:
    paths.setdefault(d.path, []).append(d.time)
print("\ndelivered frames by path")
for path, times in sorted(paths.items(), key=lambda kv: kv[1][0]):
    print(f"  {'>'.join(map(str, path)):12} {len(times):4} frames, first at t={times[0]:.3f}")
print("\n".join(result.report()))
