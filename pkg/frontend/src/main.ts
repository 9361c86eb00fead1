/** Operator console entry point: wiring, control panel, frame buffer. */

import { Connection } from "./connection";
import { Renderer } from "./renderer";
import { initialState, reduce, ConsoleState } from "./state";

function el<K extends keyof HTMLElementTagNameMap>(tag: K, attrs: Record<string, string> = {}, text = "") {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

async function boot(): Promise<void> {
  const base = (window as any).SHEETFLOW_SERVER ?? location.origin;
  const app = document.getElementById("app")!;
  const banner = el("div", { class: "banner" });
  const machine = el("div", { class: "machine" });
  const panel = el("div", { class: "panel" });
  const timeline = el("div", { class: "timeline" });
  const log = el("pre", { class: "log" });
  app.append(banner, machine, panel, timeline, log);

  let state: ConsoleState = initialState();
  let dirty = false;

  const conn = new Connection(
    base,
    (frame) => {
      state = reduce(state, frame);
      dirty = true;
      if (frame.kind === "event" || frame.kind === "planner" || frame.kind === "ack") {
        log.textContent =
          state.events
            .slice(-14)
            .map((f) => `${f.t} ${f.kind} ${JSON.stringify(f.payload)}`)
            .join("\n") + "\n";
      }
    },
    (status) => {
      banner.textContent = status === "open" ? `live - ${base}` : "connection lost, retrying...";
      banner.className = `banner ${status}`;
    }
  );

  const layout = await conn.layout();
  const renderer = new Renderer(layout, machine);
  renderer.onModuleClick(async (module) => {
    const on = state.modulesOn[module] ?? true;
    await conn.send({ kind: "ToggleModule", module, state: on ? "off" : "on" });
  });

  const scenario = el("input", { value: "5sm", size: "10" }) as HTMLInputElement;
  const submit = el("button", {}, "submit job");
  submit.onclick = () => conn.send({ kind: "SubmitJob", scenario: scenario.value });
  const jamSeq = el("input", { value: "1", size: "4" }) as HTMLInputElement;
  const jam = el("button", {}, "jam sheet");
  jam.onclick = () => conn.send({ kind: "JamSheet", seq: Number(jamSeq.value) });
  const w2 = el("input", { value: "0", size: "4" }) as HTMLInputElement;
  const weights = el("button", {}, "set w2");
  weights.onclick = () => conn.send({ kind: "SetWeights", w1: 1, w2: Number(w2.value) });
  const policy = el("select") as HTMLSelectElement;
  policy.append(el("option", { value: "purge" }, "purge"), el("option", { value: "hold" }, "hold"));
  policy.onchange = () => conn.send({ kind: "SetPolicy", policy: policy.value as "purge" | "hold" });
  panel.append(scenario, submit, jamSeq, jam, w2, weights, policy);

  conn.open();
  const renderTimeline = () => {
    // per-sheet plan bars: released plans are clamped (solid), unsent ones
    // still flexible (hatched)
    const entries = Object.entries(state.plans).slice(-16);
    if (!entries.length) {
      timeline.replaceChildren();
      return;
    }
    const maxEnd = Math.max(...entries.map(([, p]) => p.end), state.t + 1);
    timeline.replaceChildren(
      ...entries.map(([seq, plan]) => {
        const row = el("div", { class: "lane" });
        const bar = el("div", {
          class: `bar ${plan.done ? "done" : plan.released ? "released" : "flexible"}`,
          style: `width:${Math.max(2, (plan.end / maxEnd) * 100)}%`,
        });
        row.append(el("span", { class: "seq" }, `#${seq}`), bar);
        return row;
      })
    );
  };
  const tick = () => {
    if (dirty) {
      renderer.render(state);
      renderTimeline();
      dirty = false;
    }
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
}

boot();
