"""How the two kinds of success-rate feature react to the same outcomes.

A decayed counter forgets by wall-clock time; an event window forgets by
count. Run: python demos/feature_windows.py
"""

from smartroute.feature_store import (
    DecayedCounter,
    EventWindow,
    counter_read,
    counter_update,
    event_window_read,
    event_window_update,
)

outcomes = [1, 0, 1, 0, 1, 0, 1, 1, 1, 0, 1]

# %% one outcome per second into a 5 s half-life counter and two windows
counter = DecayedCounter(half_life=5.0)
w5, w10 = EventWindow(5), EventWindow(10)
print("payment  outcome  counter@5s  window@5e  window@10e")
for i, o in enumerate(outcomes, start=1):
    counter = counter_update(counter, o, ts=i)
    w5, w10 = event_window_update(w5, o), event_window_update(w10, o)
    print(f"{i:7d}  {o:7d}  {counter_read(counter, i):10.3f}  "
          f"{event_window_read(w5):9.3f}  {event_window_read(w10):10.3f}")

# %% silence: the counter drifts back toward the prior, the windows freeze
print("\nno traffic after payment 11")
for gap in (0, 5, 30, 300):
    ts = len(outcomes) + gap
    print(f"  +{gap:3d}s  counter@5s={counter_read(counter, ts):.3f}  "
          f"window@5e={event_window_read(w5):.3f}")
