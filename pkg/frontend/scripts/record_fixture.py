"""Record a console session fixture: the exact frame stream a WebSocket
subscriber receives, plus ground-truth positions() samples captured at the
instant each positions frame was emitted."""

import json
import sys
import time
from pathlib import Path

from sheetflow.model import load_bundled
from sheetflow.server import LiveRig, layout_document


def main(out_path: str) -> None:
    model = load_bundled("demo4")
    rig = LiveRig(model, seed=7, pace=0.0)
    truth = {}
    orig = rig._positions_payload

    def sampling():
        payload = orig()
        truth[str(rig.clock.now)] = {
            str(seq): [module, round(frac, 4)]
            for seq, (module, frac) in rig.sim.positions(rig.clock.now).items()
        }
        return payload

    rig._positions_payload = sampling
    sub = rig.subscribe()
    rig.submit_scenario("2sm;1dm")
    t = rig.start()
    deadline = time.time() + 30
    while time.time() < deadline and rig.sim.counts["done"] < 3:
        time.sleep(0.02)
    rig.stop()
    t.join(timeout=2)
    frames = []
    while not sub.empty():
        frames.append(sub.get())
    doc = {"layout": layout_document(model), "frames": frames, "truth": truth}
    Path(out_path).write_text(json.dumps(doc, indent=0, sort_keys=True))
    print(f"recorded {len(frames)} frames, {len(truth)} position samples")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "frontend/test/fixtures/session.json")
