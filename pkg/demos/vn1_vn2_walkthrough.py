"""Two virtual networks over one backbone: VN1 left to SPB, VN2 pinned by the controller.

    python3 demos/vn1_vn2_walkthrough.py
"""

from collections import defaultdict

from bridgesim import scenario
from bridgesim.simnet import Trace

scn = scenario.load("vn1_vn2")
trace = Trace()
result = scenario.run(scn, trace=trace)
net = result.net

print("controller decisions")
for line in net.controller.decisions:
    print("  " + line)

print("\nwrites issued by the controller, per bridge")
writes = defaultdict(int)
for bridge, _ in net.controller.write_log:
    writes[net.names.get(bridge, "(allocation)")] += 1
for name, n in sorted(writes.items()):
    print(f"  {name:6} {n}")

print("\nforwarding state of core bridge CB2 (SPB rows on B-VID 101, controller rows on 102)")
for line in net.fdb_dump():
    if line.startswith("bridge=12 "):
        print("  " + line)

print("\nwhere each labelled frame went")
seen = set()
for d in net.deliveries:
    label = result.labels[d.pkt]
    if (label, d.host) in seen:
        continue
    seen.add((label, d.host))
    print(f"  {label:8} -> {d.host:3} via {' > '.join(net.names[b] for b in d.path)}")

print()
print("\n".join(result.report()))
