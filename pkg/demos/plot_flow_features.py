"""
Flow statistics from a capture
==============================

Write a tiny TLS session to pcap bytes, read it back and summarise the
flow.
"""

# %%
from tlsverdict.synthetic import TrafficSpec, build_session_pcap
from tlsverdict.tls_inspector import extension_vector, inspect_flow
from tlsverdict.traffic_capture import assemble_flows, compute_flow_features, read_pcap

spec = TrafficSpec(
    ciphersuite=0xC02F,
    extensions=(0x0000, 0x0017, 0xFF01),
    sni="news.example.org",
    app_records=(("s2c", 1400, 0.02), ("c2s", 200, 0.05), ("s2c", 5000, 0.1)),
)
blob = build_session_pcap(spec)
packets = read_pcap(blob)
print(len(blob), "bytes,", len(packets), "packets")

# %%
(flow,) = assemble_flows(packets).values()
print(flow.key)
for name, value in compute_flow_features(flow).as_dict().items():
    print(f"  {name:12s} {value:.6g}")

# %%
# The handshake is still in the clear, so the ServerHello is readable.
info = inspect_flow(flow)
vec = extension_vector(info)
print(f"suite 0x{info.selected_ciphersuite:04x}, sni {info.sni}, complete {info.handshake_complete}")
print("extension bits", "".join(map(str, vec.bits)), "popcount", vec.popcount())
