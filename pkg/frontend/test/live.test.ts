/**
 * Live session against a real server process: module toggle and sheet jam
 * commands take effect, and the resulting reroute becomes visible in the
 * frame stream within 500 ms of the server's own exception event.
 */

import { spawn, ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Frame } from "../src/protocol";
import { WsClient } from "../src/wsclient";

const PORT = 18731;
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess;

async function post(cmd: object): Promise<any> {
  const resp = await fetch(`${BASE}/cmd`, { method: "POST", body: JSON.stringify(cmd) });
  return resp.json();
}

async function waitFor(predicate: () => boolean, ms: number, what: string): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((r) => setTimeout(r, 10));
  }
  throw new Error(`timed out waiting for ${what}`);
}

describe("live console session", () => {
  const frames: Frame[] = [];
  const arrival = new Map<Frame, number>();
  const client = new WsClient();

  beforeAll(async () => {
    server = spawn(
      "python3",
      ["-m", "sheetflow.cli", "serve", "--model", "../src/sheetflow/models/demo4.json",
       "--listen", `127.0.0.1:${PORT}`, "--pace", "1.0"],
      { cwd: new URL("..", import.meta.url).pathname, stdio: "pipe" }
    );
    await waitFor(() => false, 700, "server boot").catch(() => undefined);
    const layout = await (await fetch(`${BASE}/layout`)).json();
    expect(layout.modules.length).toBeGreaterThan(10);
    await client.connect("127.0.0.1", PORT);
    client.onText((text) => {
      const frame = JSON.parse(text) as Frame;
      frames.push(frame);
      arrival.set(frame, Date.now());
    });
  }, 20000);

  afterAll(() => {
    client.close();
    server?.kill();
  });

  it("streams a snapshot first", async () => {
    await waitFor(() => frames.length > 0, 5000, "first frame");
    expect(frames[0].kind).toBe("snapshot");
  });

  it("module toggle is acknowledged and visible", async () => {
    const ack = await post({ kind: "ToggleModule", module: "E4", state: "off" });
    expect(ack.ok).toBe(true);
    await waitFor(
      () => frames.some((f) => f.kind === "event" && f.payload.fault === "module" && f.payload.module === "E4"),
      5000,
      "module fault event"
    );
    const nack = await post({ kind: "ToggleModule", module: "Nonsense" });
    expect(nack.ok).toBe(false);
  });

  it("a jammed sheet triggers a visible reroute within 500 ms", async () => {
    const submit = await post({ kind: "SubmitJob", scenario: "4sm;7sm" });
    expect(submit.ok).toBe(true);
    const seqs: number[] = submit.seqs;
    // wait until the first sheet is executing, then jam it
    await waitFor(
      () =>
        frames.some(
          (f) => f.kind === "event" && f.payload.kind === "action-start" && f.payload.seq === seqs[0]
        ),
      20000,
      "first sheet moving"
    );
    const jam = await post({ kind: "JamSheet", seq: seqs[0] });
    expect(jam.ok).toBe(true);
    await waitFor(
      () => frames.some((f) => f.kind === "event" && f.payload.kind === "lost"),
      15000,
      "jam event"
    );
    const lostFrame = frames.find((f) => f.kind === "event" && f.payload.kind === "lost")!;
    // the replanning outcome (planner frame) must surface within 500 ms of
    // the fault reaching the stream
    await waitFor(
      () => frames.some((f) => f.kind === "planner" && f.payload.kind === "replanned"),
      5000,
      "replanned event"
    );
    const replanned = frames.find((f) => f.kind === "planner" && f.payload.kind === "replanned")!;
    expect(arrival.get(replanned)! - arrival.get(lostFrame)!).toBeLessThanOrEqual(500);
    // and new reroute plans are re-proposed on the wire
    await waitFor(
      () =>
        frames.filter((f) => f.kind === "event" && f.payload.kind === "propose").length >= seqs.length,
      20000,
      "replacement proposals"
    );
  }, 60000);
});
