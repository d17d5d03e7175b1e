"""Spread one point-to-point service over three controller paths by flow hash.

Each extra path gets its own external B-VID; a hash rule at the ingress
edge port picks the B-VID per flow, so one flow never splits.

    python3 demos/flow_spreading.py
"""

import random
from collections import Counter

from bridgesim import scenario
from bridgesim.controller import Attachment, ExplicitPath, ServiceRequest, ServiceType
from bridgesim.flowmap import FlowKey, FlowRule, MapToFlowHash, make_payload

net, _, _ = scenario.build(scenario.load("vn1_vn2"), timeline=False, services=False)
ctrl = net.controller
svc = ctrl.setup_service(ServiceRequest(
    "bulk", ServiceType.P2P, (Attachment(3, (3, 11), 22), Attachment(4, (4, 11), 22)),
    explicit=ExplicitPath((3, 13, 14, 4))))
extra = [ctrl.add_flow_path(svc, path) for path in ((3, 11, 14, 4), (3, 13, 12, 4))]
port = net.bridges[3].ports[(3, 11)]
port.hash_range = (svc.bvid, *extra)
port.flow_rules = (FlowRule(1, FlowKey(outer_vid=22), MapToFlowHash()),)

rng = random.Random(1)
flows = [rng.randrange(1 << 16) for _ in range(300)]
dst = net.hosts["v4"].mac
for i, selector in enumerate(flows * 2):  # every flow twice
    net.inject("v3", net.make_frame("v3", dst, 22, payload=make_payload(selector=selector)), at=0.1 + i * 1e-4)
net.run_until(1.0)

per_path = Counter(d.path for d in net.deliveries)
print(f"B-VIDs {port.hash_range}, {len(net.deliveries)} frames delivered")
for path, n in sorted(per_path.items()):
    print(f"  {'>'.join(map(str, path)):12} {n}")
by_flow = {}
for d in net.deliveries:
    by_flow.setdefault(net.injected[d.pkt][2].payload, set()).add(d.path)
print("flows split across paths:", sum(len(p) > 1 for p in by_flow.values()))
