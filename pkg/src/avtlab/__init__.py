"""avtlab: a deterministic lab for fileless web-malware behavior.

Simulates payload delivery over socket channels, in-browser worker and
service-worker lifecycles, coordinator-driven attacks (exfiltration,
map/reduce compute theft, request floods), and evaluates static versus
continuous behavioral detection over the resulting traces.
"""

__version__ = "0.1.0"
