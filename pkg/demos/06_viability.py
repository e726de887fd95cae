"""Does the subsidy pay for itself?

A 250 kbps audio stream at $10 per GB, 500 ms frames and a 1000 second
mean stay. The per-frame worth of D2D help is converted into money through
a reference deficit, then the average transfer is priced and compared with
what the operator saves on unicast traffic. The same for 800 kbps video.
"""

from d2dstream.viability import ViabilityInputs, viability_report

for label, kbps in (("audio", 250.0), ("video", 800.0)):
    r = viability_report(ViabilityInputs(bitrate_kbps=kbps))
    print(f"{label}: unicast cost {r.pure_b2d_cents:.2f} c per lifetime, "
          f"saving {r.actual_saving_cents:.2f} c, subsidy {r.required_subsidy_cents:.2f} c, "
          f"viable {r.viable}")
