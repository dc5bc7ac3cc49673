"""wlan-lens: passive WLAN speed/latency analytics with a built-in validator.

Three layers:

* estimators (``vst``, ``uscope``) that turn AP-side packet logs into
  per-station TCP throughput and uplink latency decompositions,
* an analytical throughput model for MU-MIMO downlinks with TCP feedback
  (``mumodel``),
* a seeded discrete-event simulator (``wlansim``) that produces both the
  logs and the ground truth the other two are validated against.
"""

__version__ = "0.1.0"

from .profiles import PROFILES, TimingProfile, get_profile

__all__ = ["PROFILES", "TimingProfile", "get_profile", "__version__"]
